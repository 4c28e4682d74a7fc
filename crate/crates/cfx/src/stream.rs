//! The `cfd1` digit stream format.
//!
//! A stream is plain text: tokens separated by whitespace and/or commas,
//! `#` starting a comment that runs to the end of the line. The first
//! token may be `h=<integer>` giving the integer part of the number
//! (default 0); every following token is a positive decimal tail digit.

use std::io::{BufRead, Write};

use crate::cf::CFString;
use crate::error::{CfError, Result};

/// Parses a whole `cfd1` stream into a head and its tail digits.
pub fn parse(reader: impl BufRead) -> Result<CFString> {
    let mut head = 0i64;
    let mut digits = Vec::new();
    let mut first = true;
    for line in reader.lines() {
        let line = line.map_err(|e| CfError::Format(format!("read error: {e}")))?;
        let body = line.split('#').next().unwrap_or("");
        for token in body.split(|c: char| c.is_whitespace() || c == ',') {
            if token.is_empty() {
                continue;
            }
            if first {
                first = false;
                if let Some(h) = token.strip_prefix("h=") {
                    head = h
                        .parse()
                        .map_err(|_| CfError::Format(format!("bad head token '{token}'")))?;
                    continue;
                }
            }
            let d: u64 = token
                .parse()
                .map_err(|_| CfError::Format(format!("bad digit token '{token}'")))?;
            if d == 0 {
                return Err(CfError::Format("tail digits must be >= 1".into()));
            }
            digits.push(d);
        }
    }
    CFString::new(head, digits)
}

/// Writes a string as a `cfd1` stream: `h=<head>` (omitted when zero)
/// followed by the tail digits, space separated, wrapped in lines.
pub fn write(mut w: impl Write, s: &CFString) -> Result<()> {
    let mut io = |text: String| {
        w.write_all(text.as_bytes())
            .map_err(|e| CfError::Format(format!("write error: {e}")))
    };
    let mut col = 0usize;
    if s.head() != 0 || s.tail().is_empty() {
        let t = format!("h={}", s.head());
        col = t.len();
        io(t)?;
    }
    for &d in s.tail() {
        let t = d.to_string();
        if col == 0 {
            col = t.len();
            io(t)?;
        } else if col + 1 + t.len() > 76 {
            io(format!("\n{t}"))?;
            col = t.len();
        } else {
            col += 1 + t.len();
            io(format!(" {t}"))?;
        }
    }
    io("\n".into())
}
