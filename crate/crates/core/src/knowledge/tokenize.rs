/// Han ideographs, including the common extension blocks.
pub fn is_cjk(c: char) -> bool {
    matches!(c,
        '\u{4E00}'..='\u{9FFF}'
        | '\u{3400}'..='\u{4DBF}'
        | '\u{F900}'..='\u{FAFF}'
        | '\u{20000}'..='\u{2A6DF}'
        | '\u{2A700}'..='\u{2EBEF}')
}

/// Index terms: overlapping character bigrams over each run of Han
/// characters (a one-character run is kept as a unigram) and lowercased
/// alphanumeric words elsewhere. Everything else separates terms.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut terms = Vec::new();
    let mut cjk: Vec<char> = Vec::new();
    let mut word = String::new();

    fn flush_cjk(run: &mut Vec<char>, terms: &mut Vec<String>) {
        match run.len() {
            0 => {}
            1 => terms.push(run[0].to_string()),
            _ => terms.extend(run.windows(2).map(|w| w.iter().collect::<String>())),
        }
        run.clear();
    }

    for c in text.chars() {
        if is_cjk(c) {
            if !word.is_empty() {
                terms.push(std::mem::take(&mut word));
            }
            cjk.push(c);
        } else {
            flush_cjk(&mut cjk, &mut terms);
            if c.is_alphanumeric() {
                word.extend(c.to_lowercase());
            } else if !word.is_empty() {
                terms.push(std::mem::take(&mut word));
            }
        }
    }
    flush_cjk(&mut cjk, &mut terms);
    if !word.is_empty() {
        terms.push(word);
    }
    terms
}

pub fn token_count(text: &str) -> usize {
    tokenize(text).len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bigrams_and_words() {
        assert_eq!(tokenize("营业收入"), ["营业", "业收", "收入"]);
        assert_eq!(tokenize("Q1 Revenue up 5%，利润率"), ["q1", "revenue", "up", "5", "利润", "润率"]);
        assert_eq!(tokenize("A。B"), ["a", "b"]);
        assert_eq!(tokenize("股"), ["股"]);
        assert!(tokenize("，。！ ...").is_empty());
    }
}
