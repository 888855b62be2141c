//! `key = value` text blocks used by the config file and as the metadata
//! header of the binary dataset and checkpoint containers.

use std::fmt::Display;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Header {
    entries: Vec<(String, String)>,
}

impl Header {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::config(key, "missing"))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|e| Error::config(key, format!("cannot parse `{raw}`: {e}")))
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(_) => self.parse(key),
        }
    }

    /// Parses text with one `key = value` per line. Blank lines and `#`
    /// comments are skipped.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut h = Header::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, format!("line {}: expected `key = value`", no + 1)))?;
            let v = v.split_once(" #").map_or(v, |(v, _)| v);
            h.push(k.trim(), v.trim());
        }
        Ok(h)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Writes a container header: magic line, entries, blank terminator.
    pub fn write_block<W: Write>(&self, magic: &str, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{magic}")?;
        w.write_all(self.to_text().as_bytes())?;
        writeln!(w)
    }

    /// Reads a container header written by [`Header::write_block`]; leaves the
    /// reader positioned at the first payload byte.
    pub fn read_block<R: BufRead>(magic: &str, r: &mut R, path: &Path) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if line.trim_end() != magic {
            return Err(Error::format(path, format!("expected magic `{magic}`")));
        }
        let mut text = String::new();
        loop {
            line.clear();
            let n = r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                return Err(Error::format(path, "header not terminated"));
            }
            if line == "\n" {
                break;
            }
            text.push_str(&line);
        }
        Header::parse_text(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

pub(crate) fn join<T: Display>(values: &[T]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub(crate) fn split<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|e| Error::config(key, format!("cannot parse `{s}`: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn parse_comments_and_overrides() {
        let h = Header::parse_text("# top\nM = 4\n\nL=3 # inline\nM = 5\n").unwrap();
        assert_eq!(h.parse::<usize>("M").unwrap(), 5);
        assert_eq!(h.get("L"), Some("3"));
        assert!(Header::parse_text("nonsense").is_err());
    }

    #[test]
    fn block_roundtrip() {
        let mut h = Header::new();
        h.push("a", 1);
        h.push("snr", join(&[20.0, 25.5]));
        let mut buf = Vec::new();
        h.write_block("magic", &mut buf).unwrap();
        buf.extend_from_slice(&[1, 2, 3]);
        let mut cur = Cursor::new(buf);
        let back = Header::read_block("magic", &mut cur, Path::new("x")).unwrap();
        assert_eq!(back, h);
        assert_eq!(split::<f64>("snr", back.get("snr").unwrap()).unwrap(), vec![20.0, 25.5]);
        assert_eq!(cur.position(), cur.get_ref().len() as u64 - 3);
    }
}
