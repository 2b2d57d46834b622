//! `--set a.b.c=value` edits of a parsed scenario document.

use toml::Value;

use crate::error::CliError;

/// Interpret the right-hand side as a TOML value, falling back to a bare
/// string (so `--set metadata.name=run7` works unquoted).
fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Apply one `path=value` override. Path segments are table keys or array
/// indices; missing table keys are created.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Invalid(format!("override `{spec}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Invalid(format!("override `{spec}` has an empty key")));
    }
    let mut node = doc;
    for (depth, key) in keys.iter().enumerate() {
        let last = depth + 1 == keys.len();
        node = match node {
            Value::Table(t) => {
                if last {
                    t.insert((*key).to_string(), parse_value(raw));
                    return Ok(());
                }
                t.entry(key.to_string()).or_insert_with(|| Value::Table(toml::Table::new()))
            }
            Value::Array(a) => {
                let i: usize = key
                    .parse()
                    .map_err(|_| CliError::Invalid(format!("override `{spec}`: `{key}` is not an index")))?;
                let len = a.len();
                let slot = a
                    .get_mut(i)
                    .ok_or_else(|| CliError::Invalid(format!("override `{spec}`: index {i} of {len}")))?;
                if last {
                    *slot = parse_value(raw);
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(CliError::Invalid(format!(
                    "override `{spec}`: `{}` is not a table",
                    keys[..depth].join(".")
                )))
            }
        };
    }
    unreachable!("the loop returns at the last key")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc() -> Value {
        Value::Table("a = 1\n[b]\nc = [1.5, 2.5]\n".parse().unwrap())
    }

    #[test]
    fn sets_scalars_arrays_and_new_keys() {
        let mut d = doc();
        apply_override(&mut d, "a=3").unwrap();
        apply_override(&mut d, "b.c.1=-0.25").unwrap();
        apply_override(&mut d, "b.name=hello").unwrap();
        apply_override(&mut d, "x.y=true").unwrap();
        assert_eq!(d["a"].as_integer(), Some(3));
        assert_eq!(d["b"]["c"][1].as_float(), Some(-0.25));
        assert_eq!(d["b"]["name"].as_str(), Some("hello"));
        assert_eq!(d["x"]["y"].as_bool(), Some(true));
    }

    #[test]
    fn rejects_bad_paths() {
        let mut d = doc();
        assert!(apply_override(&mut d, "a").is_err());
        assert!(apply_override(&mut d, "a.b=1").is_err());
        assert!(apply_override(&mut d, "b.c.9=1").is_err());
        assert!(apply_override(&mut d, "b.c.x=1").is_err());
        assert!(apply_override(&mut d, "b..c=1").is_err());
    }

    proptest! {
        #[test]
        fn float_overrides_are_exact(v in -1e6f64..1e6) {
            let mut d = doc();
            apply_override(&mut d, &format!("b.v={v:?}")).unwrap();
            prop_assert_eq!(d["b"]["v"].as_float(), Some(v));
        }
    }
}
