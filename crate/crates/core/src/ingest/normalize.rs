/// Collapses runs of spaces and tabs into one space and trims the line.
pub fn normalize_line(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut pending_space = false;
    for ch in line.chars() {
        if ch == ' ' || ch == '\t' || ch == '\u{a0}' || ch == '\r' {
            pending_space = true;
        } else {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        }
    }
    out
}

/// Joins paragraph lines into a single normalized line.
pub(crate) fn normalize_paragraph<'a>(lines: impl IntoIterator<Item = &'a str>) -> String {
    let joined: Vec<String> = lines.into_iter().map(normalize_line).filter(|l| !l.is_empty()).collect();
    joined.join(" ")
}

/// Code keeps its newlines and indentation; only trailing whitespace and
/// leading/trailing blank lines are removed.
pub fn normalize_code(code: &str) -> String {
    let lines: Vec<&str> = code.lines().map(|l| l.trim_end()).collect();
    let first = lines.iter().position(|l| !l.is_empty());
    let last = lines.iter().rposition(|l| !l.is_empty());
    match (first, last) {
        (Some(a), Some(b)) => lines[a..=b].join("\n"),
        _ => String::new(),
    }
}

/// Normalizes a table row given as cells.
pub fn normalize_table_row<S: AsRef<str>>(cells: &[S]) -> String {
    cells.iter().map(|c| normalize_line(c.as_ref())).collect::<Vec<_>>().join(" | ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapses_spaces_and_tabs() {
        assert_eq!(normalize_line("  a \t\t b   c "), "a b c");
        assert_eq!(normalize_paragraph(["x  y", "", "  z"]), "x y z");
    }

    #[test]
    fn code_keeps_indentation() {
        assert_eq!(normalize_code("\n  fn a() {  \n      b\n  }\n\n"), "  fn a() {\n      b\n  }");
    }
}
