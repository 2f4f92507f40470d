use super::tokenize::token_count;

/// Characters that end a sentence on their own.
const CJK_TERMINATORS: [char; 4] = ['。', '！', '？', '；'];
/// End a sentence only when followed by whitespace or the end of text.
const LATIN_TERMINATORS: [char; 3] = ['.', '!', '?'];
/// Closing quotes and brackets stay with the sentence they close.
const CLOSERS: [char; 8] = ['”', '’', '」', '』', '）', ')', '"', '\''];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub text: String,
    pub token_count: usize,
    /// A single sentence longer than the chunk budget.
    pub oversized: bool,
}

/// Splits `body` into sentences. Trailing closers and whitespace attach to
/// the sentence before them, so the pieces concatenate back to `body`.
pub fn sentences(body: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = body.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i].1;
        let next = chars.get(i + 1).map(|p| p.1);
        let boundary = CJK_TERMINATORS.contains(&c)
            || (LATIN_TERMINATORS.contains(&c) && next.is_none_or(char::is_whitespace));
        i += 1;
        if boundary {
            while i < chars.len() && CLOSERS.contains(&chars[i].1) {
                i += 1;
            }
            while i < chars.len() && chars[i].1.is_whitespace() {
                i += 1;
            }
            let end = chars.get(i).map_or(body.len(), |p| p.0);
            out.push(&body[start..end]);
            start = end;
        }
    }
    if start < body.len() {
        out.push(&body[start..]);
    }
    out
}

/// Greedily packs sentences into chunks of at most `max_tokens` index terms.
pub fn segment(body: &str, max_tokens: usize) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut current_tokens = 0;
    let flush = |current: &mut String, tokens: &mut usize, out: &mut Vec<Segment>| {
        let text = current.trim();
        if !text.is_empty() {
            out.push(Segment {
                text: text.to_string(),
                token_count: *tokens,
                oversized: *tokens > max_tokens,
            });
        }
        current.clear();
        *tokens = 0;
    };
    for sentence in sentences(body) {
        let n = token_count(sentence);
        if !current.is_empty() && current_tokens + n > max_tokens {
            flush(&mut current, &mut current_tokens, &mut out);
        }
        current.push_str(sentence);
        current_tokens += n;
    }
    flush(&mut current, &mut current_tokens, &mut out);
    out
}
