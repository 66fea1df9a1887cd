// Copyright 2026 qrepeat Contributors
// SPDX-License-Identifier: Apache-2.0

fn main() {
    std::process::exit(qrepeat_cli::cli_main());
}
