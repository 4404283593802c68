use super::normalize::{normalize_code, normalize_line, normalize_paragraph, normalize_table_row};
use super::{Part, PartKind};

/// Block accumulator shared by the plain-text and markdown parsers.
struct Builder {
    parts: Vec<Part>,
    headings: Vec<(usize, String)>,
    page: Option<u32>,
    paragraph: Vec<String>,
    list: Vec<String>,
    table: Vec<String>,
    title: Option<String>,
}

impl Builder {
    fn new() -> Self {
        Self {
            parts: Vec::new(),
            headings: Vec::new(),
            page: None,
            paragraph: Vec::new(),
            list: Vec::new(),
            table: Vec::new(),
            title: None,
        }
    }

    fn section_path(&self) -> Vec<String> {
        self.headings.iter().map(|(_, h)| h.clone()).collect()
    }

    fn push(&mut self, kind: PartKind, content: String) {
        if content.trim().is_empty() {
            return;
        }
        self.parts.push(Part { kind, content, section_path: self.section_path(), page: self.page });
    }

    fn flush(&mut self) {
        if !self.paragraph.is_empty() {
            let text = normalize_paragraph(self.paragraph.iter().map(String::as_str));
            self.paragraph.clear();
            self.push(PartKind::Text, text);
        }
        if !self.list.is_empty() {
            let text =
                self.list.drain(..).map(|item| format!("- {}", normalize_line(&item))).collect::<Vec<_>>().join("\n");
            self.push(PartKind::Text, text);
        }
        if !self.table.is_empty() {
            let rows: Vec<String> = self.table.drain(..).collect();
            self.push(PartKind::Table, rows.join("\n"));
        }
    }

    fn heading(&mut self, level: usize, text: &str) {
        self.flush();
        let text = normalize_line(text);
        if text.is_empty() {
            return;
        }
        while self.headings.last().is_some_and(|(l, _)| *l >= level) {
            self.headings.pop();
        }
        if self.title.is_none() {
            self.title = Some(text.clone());
        }
        self.headings.push((level, text));
    }

    fn set_page(&mut self, page: u32) {
        self.flush();
        self.page = Some(page);
    }

    fn next_page(&mut self) {
        self.flush();
        self.page = Some(self.page.map_or(2, |p| p + 1));
    }
}

/// Recognizes `<!-- page: N -->` and `<!-- page N -->` markers.
pub(super) fn page_marker(line: &str) -> Option<u32> {
    let inner = line.trim().strip_prefix("<!--")?.strip_suffix("-->")?.trim();
    let rest = inner.strip_prefix("page")?.trim_start_matches([':', ' ']);
    rest.trim().parse().ok().filter(|p| *p >= 1)
}

fn atx_heading(line: &str) -> Option<(usize, &str)> {
    let trimmed = line.trim_start();
    if line.len() - trimmed.len() > 3 {
        return None;
    }
    let level = trimmed.chars().take_while(|c| *c == '#').count();
    if level == 0 || level > 6 {
        return None;
    }
    let rest = &trimmed[level..];
    if !rest.is_empty() && !rest.starts_with(' ') && !rest.starts_with('\t') {
        return None;
    }
    Some((level, rest.trim().trim_end_matches('#').trim_end()))
}

fn fence(line: &str) -> Option<&str> {
    let t = line.trim_start();
    if t.starts_with("```") {
        Some("```")
    } else if t.starts_with("~~~") {
        Some("~~~")
    } else {
        None
    }
}

fn list_item(line: &str) -> Option<&str> {
    let t = line.trim_start();
    for marker in ["- ", "* ", "+ "] {
        if let Some(rest) = t.strip_prefix(marker) {
            return Some(rest);
        }
    }
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(rest) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return Some(rest);
        }
    }
    None
}

fn is_table_separator(cells: &[&str]) -> bool {
    !cells.is_empty()
        && cells.iter().all(|c| {
            let c = c.trim();
            !c.is_empty() && c.chars().all(|ch| ch == '-' || ch == ':') && c.contains('-')
        })
}

fn table_cells(line: &str) -> Vec<&str> {
    let t = line.trim();
    let t = t.strip_prefix('|').unwrap_or(t);
    let t = t.strip_suffix('|').unwrap_or(t);
    t.split('|').collect()
}

/// A line consisting solely of `![alt](target)`.
fn image_alt(line: &str) -> Option<&str> {
    let t = line.trim();
    let rest = t.strip_prefix("![")?;
    let close = rest.find("](")?;
    if !t.ends_with(')') {
        return None;
    }
    Some(&rest[..close])
}

pub(super) fn parse_markdown(text: &str) -> (Vec<Part>, Option<String>) {
    let mut b = Builder::new();
    let mut lines = text.split('\n');
    while let Some(line) = lines.next() {
        if line.contains('\u{c}') {
            b.next_page();
            continue;
        }
        if let Some(marker) = fence(line) {
            b.flush();
            let mut body = Vec::new();
            for inner in lines.by_ref() {
                if inner.trim_start().starts_with(marker) {
                    break;
                }
                body.push(inner);
            }
            b.push(PartKind::Code, normalize_code(&body.join("\n")));
            continue;
        }
        if let Some(page) = page_marker(line) {
            b.set_page(page);
            continue;
        }
        if let Some((level, heading)) = atx_heading(line) {
            b.heading(level, heading);
            continue;
        }
        if line.trim().is_empty() {
            b.flush();
            continue;
        }
        if line.trim_start().starts_with('|') {
            if !b.table.is_empty() || (b.paragraph.is_empty() && b.list.is_empty()) {
                b.flush_text_only();
                let cells = table_cells(line);
                if !is_table_separator(&cells) {
                    b.table.push(normalize_table_row(&cells));
                }
                continue;
            }
        } else if !b.table.is_empty() {
            b.flush();
        }
        if let Some(alt) = image_alt(line) {
            b.flush();
            b.push(PartKind::ImageCaption, normalize_line(alt));
            continue;
        }
        if let Some(item) = list_item(line) {
            if !b.paragraph.is_empty() {
                b.flush();
            }
            b.list.push(item.to_string());
            continue;
        }
        if !b.list.is_empty() && (line.starts_with("  ") || line.starts_with('\t')) {
            if let Some(last) = b.list.last_mut() {
                last.push(' ');
                last.push_str(line.trim());
            }
            continue;
        }
        if !b.list.is_empty() {
            b.flush();
        }
        b.paragraph.push(line.to_string());
    }
    b.flush();
    (b.parts, b.title)
}

impl Builder {
    fn flush_text_only(&mut self) {
        if !self.paragraph.is_empty() || !self.list.is_empty() {
            let table = std::mem::take(&mut self.table);
            self.flush();
            self.table = table;
        }
    }
}

/// Plain text: blank lines separate paragraphs, form feeds separate pages.
pub(super) fn parse_plain(text: &str) -> (Vec<Part>, Option<String>) {
    let mut b = Builder::new();
    let saw_form_feed = text.contains('\u{c}');
    if saw_form_feed {
        b.page = Some(1);
    }
    for line in text.split('\n') {
        let mut segments = line.split('\u{c}');
        let first = segments.next().unwrap_or_default();
        if first.trim().is_empty() {
            b.flush();
        } else {
            b.paragraph.push(first.to_string());
        }
        for seg in segments {
            b.next_page();
            if !seg.trim().is_empty() {
                b.paragraph.push(seg.to_string());
            }
        }
    }
    b.flush();
    (b.parts, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heading_stack() {
        let md = "# A\n\n## B\n\ntext b\n\n### C\n\ntext c\n\n## D\n\ntext d\n";
        let (parts, title) = parse_markdown(md);
        assert_eq!(title.as_deref(), Some("A"));
        let paths: Vec<Vec<String>> = parts.iter().map(|p| p.section_path.clone()).collect();
        assert_eq!(
            paths,
            vec![
                vec!["A".to_string(), "B".into()],
                vec!["A".to_string(), "B".into(), "C".into()],
                vec!["A".to_string(), "D".into()],
            ]
        );
    }

    #[test]
    fn pipe_table_and_separator() {
        let md = "# T\n\n| Name | Default |\n|------|:-------:|\n| GSTART_TIMEOUT | 30s |\n\nAfter.\n";
        let (parts, _) = parse_markdown(md);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].kind, PartKind::Table);
        assert_eq!(parts[0].content, "Name | Default\nGSTART_TIMEOUT | 30s");
    }

    #[test]
    fn image_caption_and_list_and_pages() {
        let md = "# I\n\n![Cluster topology diagram](topo.png)\n\n<!-- page: 4 -->\n\n- one\n- two\n  wrapped\n";
        let (parts, _) = parse_markdown(md);
        assert_eq!(parts[0].kind, PartKind::ImageCaption);
        assert_eq!(parts[0].content, "Cluster topology diagram");
        assert_eq!(parts[0].page, None);
        assert_eq!(parts[1].content, "- one\n- two wrapped");
        assert_eq!(parts[1].page, Some(4));
    }

    #[test]
    fn page_marker_forms() {
        assert_eq!(page_marker("<!-- page: 3 -->"), Some(3));
        assert_eq!(page_marker("<!-- page 12 -->"), Some(12));
        assert_eq!(page_marker("<!-- page: 0 -->"), None);
        assert_eq!(page_marker("<!-- note -->"), None);
    }

    #[test]
    fn plain_form_feed_pages() {
        let (parts, _) = parse_plain("first page\n\u{c}second page\n");
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].page, Some(1));
        assert_eq!(parts[1].page, Some(2));
    }
}
