use super::markdown::page_marker;
use super::normalize::{normalize_code, normalize_line, normalize_table_row};
use super::{Part, PartKind};

enum Token<'a> {
    Open { name: String, attrs: &'a str },
    Close(String),
    Comment(&'a str),
    Text(&'a str),
}

fn tokenize(src: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut rest = src;
    while !rest.is_empty() {
        if let Some(body) = rest.strip_prefix("<!--") {
            let end = body.find("-->").unwrap_or(body.len());
            out.push(Token::Comment(&rest[..(4 + end + 3).min(rest.len())]));
            rest = &body[(end + 3).min(body.len())..];
            continue;
        }
        if rest.starts_with('<') {
            let end = match rest.find('>') {
                Some(e) => e,
                None => {
                    out.push(Token::Text(rest));
                    break;
                }
            };
            let inner = rest[1..end].trim().trim_end_matches('/');
            rest = &rest[end + 1..];
            if let Some(name) = inner.strip_prefix('/') {
                out.push(Token::Close(name.trim().to_ascii_lowercase()));
            } else if !inner.starts_with('!') && !inner.starts_with('?') {
                let split = inner.find(|c: char| c.is_whitespace()).unwrap_or(inner.len());
                out.push(Token::Open { name: inner[..split].to_ascii_lowercase(), attrs: &inner[split..] });
            }
            continue;
        }
        let end = rest.find('<').unwrap_or(rest.len());
        out.push(Token::Text(&rest[..end]));
        rest = &rest[end..];
    }
    out
}

pub(super) fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        let Some(semi) = rest[..rest.len().min(12)].find(';') else {
            out.push('&');
            rest = &rest[1..];
            continue;
        };
        let entity = &rest[1..semi];
        let decoded = match entity {
            "amp" => Some('&'),
            "lt" => Some('<'),
            "gt" => Some('>'),
            "quot" => Some('"'),
            "apos" | "#39" => Some('\''),
            "nbsp" => Some(' '),
            e if e.starts_with("#x") || e.starts_with("#X") => {
                u32::from_str_radix(&e[2..], 16).ok().and_then(char::from_u32)
            }
            e if e.starts_with('#') => e[1..].parse().ok().and_then(char::from_u32),
            _ => None,
        };
        match decoded {
            Some(ch) => {
                out.push(ch);
                rest = &rest[semi + 1..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn attr(attrs: &str, key: &str) -> Option<String> {
    let lower = attrs.to_ascii_lowercase();
    let mut from = 0;
    while let Some(pos) = lower[from..].find(key) {
        let at = from + pos;
        let before_ok = at == 0 || lower.as_bytes()[at - 1].is_ascii_whitespace();
        let after = lower[at + key.len()..].trim_start();
        if before_ok && after.starts_with('=') {
            let offset = attrs.len() - after.len() + 1;
            let value = attrs[offset..].trim_start();
            let (quote, body) = match value.chars().next() {
                Some(q @ ('"' | '\'')) => (Some(q), &value[1..]),
                _ => (None, value),
            };
            let end = match quote {
                Some(q) => body.find(q).unwrap_or(body.len()),
                None => body.find(char::is_whitespace).unwrap_or(body.len()),
            };
            return Some(decode_entities(&body[..end]));
        }
        from = at + key.len();
    }
    None
}

#[derive(PartialEq)]
enum Block {
    None,
    Paragraph,
    Heading(usize),
    Pre,
    ListItem,
}

pub(super) fn parse_html(src: &str) -> (Vec<Part>, Option<String>) {
    let mut parts = Vec::new();
    let mut headings: Vec<(usize, String)> = Vec::new();
    let mut page: Option<u32> = None;
    let mut title: Option<String> = None;
    let mut doc_title: Option<String> = None;

    let mut block = Block::None;
    let mut buf = String::new();
    let mut list_items: Vec<String> = Vec::new();
    let mut table: Option<Vec<Vec<String>>> = None;
    let mut cell: Option<String> = None;
    let mut skip_depth = 0usize;
    let mut in_title = false;

    let section = |headings: &Vec<(usize, String)>| headings.iter().map(|(_, h)| h.clone()).collect::<Vec<_>>();

    macro_rules! emit {
        ($kind:expr, $content:expr) => {{
            let content: String = $content;
            if !content.trim().is_empty() {
                parts.push(Part { kind: $kind, content, section_path: section(&headings), page });
            }
        }};
    }
    macro_rules! flush_block {
        () => {{
            match std::mem::replace(&mut block, Block::None) {
                Block::Paragraph | Block::None => emit!(PartKind::Text, normalize_line(&buf.replace('\n', " "))),
                Block::Pre => emit!(PartKind::Code, normalize_code(&buf)),
                Block::ListItem => {
                    let item = normalize_line(&buf.replace('\n', " "));
                    if !item.is_empty() {
                        list_items.push(item);
                    }
                }
                Block::Heading(level) => {
                    let text = normalize_line(&buf.replace('\n', " "));
                    if !text.is_empty() {
                        while headings.last().is_some_and(|(l, _)| *l >= level) {
                            headings.pop();
                        }
                        if title.is_none() {
                            title = Some(text.clone());
                        }
                        headings.push((level, text));
                    }
                }
            }
            buf.clear();
        }};
    }
    macro_rules! flush_list {
        () => {{
            if !list_items.is_empty() {
                let text = list_items.drain(..).map(|i| format!("- {i}")).collect::<Vec<_>>().join("\n");
                emit!(PartKind::Text, text);
            }
        }};
    }

    for token in tokenize(src) {
        match token {
            Token::Comment(c) => {
                if let Some(p) = page_marker(c) {
                    flush_block!();
                    flush_list!();
                    page = Some(p);
                }
            }
            Token::Open { name, attrs } => {
                if skip_depth > 0 {
                    if name == "script" || name == "style" {
                        skip_depth += 1;
                    }
                    continue;
                }
                match name.as_str() {
                    "script" | "style" => skip_depth = 1,
                    "title" => in_title = true,
                    "p" | "div" | "section" | "article" | "body" => {
                        if block != Block::Pre {
                            flush_block!();
                            flush_list!();
                            if name == "p" {
                                block = Block::Paragraph;
                            }
                        }
                        if let Some(p) = attr(attrs, "data-page").and_then(|v| v.trim().parse().ok()) {
                            page = Some(p);
                        }
                    }
                    h if h.len() == 2 && h.starts_with('h') && h.as_bytes()[1].is_ascii_digit() => {
                        let level = (h.as_bytes()[1] - b'0') as usize;
                        if (1..=6).contains(&level) {
                            flush_block!();
                            flush_list!();
                            block = Block::Heading(level);
                        }
                    }
                    "pre" => {
                        flush_block!();
                        flush_list!();
                        block = Block::Pre;
                    }
                    "li" => {
                        flush_block!();
                        block = Block::ListItem;
                    }
                    "ul" | "ol" => {
                        flush_block!();
                    }
                    "table" => {
                        flush_block!();
                        flush_list!();
                        table = Some(Vec::new());
                    }
                    "tr" => {
                        if let Some(t) = table.as_mut() {
                            t.push(Vec::new());
                        }
                    }
                    "td" | "th" => cell = Some(String::new()),
                    "br" => {
                        if let Some(c) = cell.as_mut() {
                            c.push(' ');
                        } else {
                            buf.push('\n');
                        }
                    }
                    "img" => {
                        if let Some(alt) = attr(attrs, "alt") {
                            let alt = normalize_line(&alt);
                            if !alt.is_empty() {
                                if table.is_none() {
                                    flush_block!();
                                }
                                emit!(PartKind::ImageCaption, alt);
                            }
                        }
                    }
                    _ => {}
                }
            }
            Token::Close(name) => {
                if skip_depth > 0 {
                    if name == "script" || name == "style" {
                        skip_depth -= 1;
                    }
                    continue;
                }
                match name.as_str() {
                    "title" => in_title = false,
                    "p" | "pre" | "li" => flush_block!(),
                    h if h.len() == 2 && h.starts_with('h') && h.as_bytes()[1].is_ascii_digit() => flush_block!(),
                    "ul" | "ol" => {
                        flush_block!();
                        flush_list!();
                    }
                    "td" | "th" => {
                        if let (Some(c), Some(t)) = (cell.take(), table.as_mut()) {
                            if t.is_empty() {
                                t.push(Vec::new());
                            }
                            t.last_mut().expect("row").push(c);
                        }
                    }
                    "table" => {
                        if let Some(rows) = table.take() {
                            let text = rows
                                .iter()
                                .filter(|r| !r.is_empty())
                                .map(|r| normalize_table_row(r))
                                .collect::<Vec<_>>()
                                .join("\n");
                            emit!(PartKind::Table, text);
                        }
                    }
                    "body" | "div" | "section" | "article" if block != Block::Pre => {
                        flush_block!();
                        flush_list!();
                    }
                    _ => {}
                }
            }
            Token::Text(t) => {
                if skip_depth > 0 {
                    continue;
                }
                let text = decode_entities(t);
                if in_title {
                    doc_title = Some(normalize_line(&text));
                } else if let Some(c) = cell.as_mut() {
                    c.push_str(&text);
                } else if table.is_some() {
                } else {
                    buf.push_str(&text);
                }
            }
        }
    }
    flush_block!();
    flush_list!();
    (parts, doc_title.filter(|t| !t.is_empty()).or(title))
}
