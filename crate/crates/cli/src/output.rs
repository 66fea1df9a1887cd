// Copyright 2026 qrepeat Contributors
// SPDX-License-Identifier: Apache-2.0

//! Artifact writers. Every floating-point number leaves the program with 17
//! significant digits (round-trip exact for IEEE doubles), in CSV cells and
//! JSON documents alike, so reruns can be compared byte for byte.

use std::io::{self, Write as _};
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};

use qrepeat_core::linalg::C64;

use crate::CliError;

/// Format one double with 17 significant digits.
pub fn fmt17(value: f64) -> String {
    format!("{value:.16e}")
}

/// JSON formatter that renders every float via [`fmt17`]. Wraps either the
/// compact or the pretty base formatter and only intercepts numbers.
pub struct SciFormatter<F> {
    inner: F,
}

impl SciFormatter<CompactFormatter> {
    /// Single-line output, for JSONL records.
    pub fn compact() -> Self {
        SciFormatter { inner: CompactFormatter }
    }
}

impl<'a> SciFormatter<PrettyFormatter<'a>> {
    /// Indented output, for reports and metadata.
    pub fn pretty() -> Self {
        SciFormatter { inner: PrettyFormatter::new() }
    }
}

impl<F: Formatter> Formatter for SciFormatter<F> {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        if value.is_finite() {
            writer.write_all(fmt17(value).as_bytes())
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_array(writer)
    }

    fn end_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_object(writer)
    }

    fn end_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_object_key(writer, first)
    }

    fn begin_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_object_value(writer)
    }
}

/// Serialize to pretty JSON with 17-digit floats, trailing newline included.
pub fn to_sci_json_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SciFormatter::pretty());
    value
        .serialize(&mut ser)
        .map_err(|e| CliError::Config(format!("serializing output: {e}")))?;
    buf.push(b'\n');
    Ok(buf)
}

/// Serialize to one compact JSON line with 17-digit floats, newline included.
pub fn to_sci_json_line<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SciFormatter::compact());
    value
        .serialize(&mut ser)
        .map_err(|e| CliError::Config(format!("serializing output: {e}")))?;
    buf.push(b'\n');
    Ok(buf)
}

/// Create the output directory (and parents) if needed.
pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Write bytes to a file, mapping failures to the I/O exit path.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Render per-step reduced states as CSV: one row per step, the step index
/// followed by the row-major matrix entries as alternating real and
/// imaginary parts (`1 + 2·d²` columns). No header row.
pub fn states_csv(states: &[Array2<C64>]) -> String {
    let mut out = String::new();
    for (step, rho) in states.iter().enumerate() {
        out.push_str(&step.to_string());
        for z in rho.iter() {
            out.push(',');
            out.push_str(&fmt17(z.re));
            out.push(',');
            out.push_str(&fmt17(z.im));
        }
        out.push('\n');
    }
    out
}

/// Write the states CSV to disk.
pub fn write_states_csv(path: &Path, states: &[Array2<C64>]) -> Result<(), CliError> {
    write_file(path, states_csv(states).as_bytes())
}

/// A complex matrix as nested `[re, im]` pairs for JSON output.
pub fn complex_table(m: &Array2<C64>) -> Vec<Vec<[f64; 2]>> {
    m.rows()
        .into_iter()
        .map(|row| row.iter().map(|z| [z.re, z.im]).collect())
        .collect()
}

/// A complex scalar as a `[re, im]` pair.
pub fn complex_pair(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

/// Write a JSONL file: one compact JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, lines: &[T]) -> Result<(), CliError> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = io::BufWriter::new(file);
    for line in lines {
        let bytes = to_sci_json_line(line)?;
        w.write_all(&bytes).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Write a pretty JSON document.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_file(path, &to_sci_json_pretty(value)?)
}
