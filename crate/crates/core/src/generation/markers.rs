use std::collections::BTreeSet;

/// Positions and values of `[n]` markers, `n` a decimal integer.
fn scan(text: &str) -> Vec<(usize, usize, usize)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            let start = i;
            let mut j = i + 1;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b']' && j - i <= 10 {
                if let Ok(n) = text[i + 1..j].parse() {
                    out.push((start, j + 1, n));
                }
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

pub fn markers_in_order(text: &str) -> Vec<usize> {
    scan(text).into_iter().map(|(_, _, n)| n).collect()
}

pub fn marker_set(text: &str) -> BTreeSet<usize> {
    scan(text).into_iter().map(|(_, _, n)| n).collect()
}

/// Removes markers outside `1..=max`.
pub fn strip_invalid_markers(text: &str, max: usize) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (start, end, n) in scan(text) {
        if n == 0 || n > max {
            out.push_str(&text[last..start]);
            last = end;
        }
    }
    out.push_str(&text[last..]);
    if out.len() == text.len() {
        return out;
    }
    let collapsed: Vec<&str> = out.split(' ').filter(|w| !w.is_empty()).collect();
    collapsed.join(" ").replace(" .", ".").replace(" ,", ",")
}
