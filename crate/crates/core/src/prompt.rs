//! Single-pass `{placeholder}` substitution.
//!
//! A placeholder is `{` + a lowercase identifier + `}`. Other braces (JSON
//! examples inside prompts, for instance) pass through untouched, and
//! substituted values are never re-scanned.

use alloc::string::{String, ToString};

use crate::{Error, Result};

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Fills every placeholder in `template` from `vars`. A placeholder without a
/// value is an error.
pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len() + vars.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_ident(&after[..close]) => {
                let name = &after[..close];
                let value = vars
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| Error::MissingPlaceholder(name.to_string()))?;
                out.push_str(value);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Checks that `template` uses only the given placeholder names.
pub fn check_placeholders(template: &str, allowed: &[&str]) -> Result<()> {
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        if let Some(close) = after.find('}') {
            let name = &after[..close];
            if is_ident(name) && !allowed.contains(&name) {
                return Err(Error::InvalidParameter(alloc::format!("unknown placeholder `{{{name}}}`")));
            }
        }
        rest = after;
    }
    Ok(())
}
