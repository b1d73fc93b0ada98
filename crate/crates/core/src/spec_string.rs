//! Parser for the `name(key=value,...)` strings used in config files, e.g.
//! `riesz(s=1,eps=0.1)` or `grid(extent=1.2,pts_per_axis=20)`.

use crate::error::{Error, Result};

/// A parsed `name(key=value,...)` expression.
#[derive(Debug, Clone, PartialEq)]
pub struct CallExpr {
    pub name: String,
    pub args: Vec<(String, String)>,
}

impl CallExpr {
    pub fn parse(input: &str) -> Result<Self> {
        let s = input.trim();
        let open = s
            .find('(')
            .ok_or_else(|| Error::parse(format!("`{s}`: expected `name(...)`")))?;
        if !s.ends_with(')') {
            return Err(Error::parse(format!("`{s}`: missing closing parenthesis")));
        }
        let name = s[..open].trim();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::parse(format!("`{s}`: invalid name `{name}`")));
        }
        let body = &s[open + 1..s.len() - 1];
        if body.contains('(') || body.contains(')') {
            return Err(Error::parse(format!("`{s}`: nested parentheses")));
        }
        let mut args: Vec<(String, String)> = Vec::new();
        for part in body.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("`{part}`: expected key=value")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                return Err(Error::parse(format!("`{part}`: empty key or value")));
            }
            if args.iter().any(|(seen, _)| seen == k) {
                return Err(Error::parse(format!("duplicate key `{k}`")));
            }
            args.push((k.to_string(), v.to_string()));
        }
        Ok(Self {
            name: name.to_string(),
            args,
        })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.args.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Rejects keys outside `allowed`.
    pub fn expect_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.args.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            Some((k, _)) => Err(Error::parse(format!("{}: unknown key `{k}`", self.name))),
            None => Ok(()),
        }
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let raw = self
            .raw(key)
            .ok_or_else(|| Error::parse(format!("{}: missing `{key}`", self.name)))?;
        parse_f64(raw)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        self.raw(key).map_or(Ok(default), parse_f64)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        let raw = self
            .raw(key)
            .ok_or_else(|| Error::parse(format!("{}: missing `{key}`", self.name)))?;
        parse_usize(raw)
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        self.raw(key).map_or(Ok(default), parse_usize)
    }
}

pub(crate) fn parse_f64(raw: &str) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::parse(format!("`{raw}` is not a number")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::parse(format!("`{raw}` is not finite")))
    }
}

pub(crate) fn parse_usize(raw: &str) -> Result<usize> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<usize>() {
        return Ok(v);
    }
    // Accept integral floats such as `1e3`.
    let v = parse_f64(raw)?;
    if v >= 0.0 && v.fract() == 0.0 && v < 1e15 {
        Ok(v as usize)
    } else {
        Err(Error::parse(format!("`{raw}` is not a nonnegative integer")))
    }
}
