//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Lists are comma separated;
//! record lists use `;` between records and `:` between fields, e.g.
//! `rains = 40.5:2:3.0:1; 90.5:1:0.8:0.6`.

use std::collections::BTreeMap;

pub type KvResult<T> = std::result::Result<T, String>;

pub fn parse(text: &str) -> KvResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(format!("line {}: empty key", n + 1));
        }
        if out.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(format!("line {}: duplicate key `{key}`", n + 1));
        }
    }
    Ok(out)
}

pub fn number(key: &str, value: &str) -> KvResult<f64> {
    value
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("`{key}`: `{value}` is not a number"))
}

pub fn list(key: &str, value: &str) -> KvResult<Vec<f64>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| number(key, v)).collect()
}

pub fn records(key: &str, value: &str, fields: usize) -> KvResult<Vec<Vec<f64>>> {
    value
        .split(';')
        .map(str::trim)
        .filter(|r| !r.is_empty())
        .map(|r| {
            let f: Vec<f64> = r.split(':').map(|v| number(key, v)).collect::<KvResult<_>>()?;
            if f.len() != fields {
                return Err(format!("`{key}`: record `{r}` needs {fields} fields"));
            }
            Ok(f)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_and_comments() {
        let m = parse("# header\n a = 1 \n\nb=x,y # trailing\n").unwrap();
        assert_eq!(m["a"], "1");
        assert_eq!(m["b"], "x,y");
        assert!(parse("a = 1\na = 2").is_err());
        assert!(parse("novalue").is_err());
    }

    #[test]
    fn typed_values() {
        assert_eq!(list("k", "1, 2.5,-3").unwrap(), vec![1.0, 2.5, -3.0]);
        assert!(list("k", "").unwrap().is_empty());
        assert!(number("k", "nan").is_err());
        assert_eq!(records("k", "1:2; 3:4;", 2).unwrap(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(records("k", "1:2:3", 2).is_err());
    }
}
