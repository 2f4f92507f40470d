//! Brute-force references for the overlap metrics, working on explicit
//! token lists.

#![allow(dead_code)]

/// Size of the multiset intersection, by counting each distinct token.
pub fn multiset_overlap(a: &[&str], b: &[&str]) -> usize {
    let mut seen: Vec<&str> = Vec::new();
    let mut total = 0;
    for t in a {
        if seen.contains(t) {
            continue;
        }
        seen.push(t);
        let in_a = a.iter().filter(|x| *x == t).count();
        let in_b = b.iter().filter(|x| *x == t).count();
        total += in_a.min(in_b);
    }
    total
}

fn is_subsequence(needle: &[&str], hay: &[&str]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

/// Longest common subsequence by trying every subsequence of the shorter list.
pub fn lcs_brute(a: &[&str], b: &[&str]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    assert!(short.len() <= 16, "brute force limited to 16 tokens");
    (0u32..1 << short.len())
        .filter_map(|mask| {
            let sub: Vec<&str> = (0..short.len()).filter(|i| mask & (1 << i) != 0).map(|i| short[i]).collect();
            is_subsequence(&sub, long).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

/// Precision, recall and balanced F from an overlap count.
pub fn prf(overlap: usize, pred: usize, gold: usize) -> (f64, f64, f64) {
    if pred == 0 && gold == 0 {
        return (1.0, 1.0, 1.0);
    }
    if pred == 0 || gold == 0 || overlap == 0 {
        return (0.0, 0.0, 0.0);
    }
    let p = overlap as f64 / pred as f64;
    let r = overlap as f64 / gold as f64;
    (p, r, 2.0 * p * r / (p + r))
}

pub type Case = (&'static str, &'static str, &'static [&'static str], &'static [&'static str], usize, usize);

/// (prediction, gold, prediction tokens, gold tokens, multiset overlap, LCS),
/// with the counts worked out by hand.
pub const SUITE: [Case; 20] = [
    ("a b c", "b c d", &["a", "b", "c"], &["b", "c", "d"], 2, 2),
    ("the cat sat", "the cat", &["the", "cat", "sat"], &["the", "cat"], 2, 2),
    ("", "", &[], &[], 0, 0),
    ("", "x", &[], &["x"], 0, 0),
    ("x", "", &["x"], &[], 0, 0),
    ("利率上调", "利率下调", &["利", "率", "上", "调"], &["利", "率", "下", "调"], 3, 3),
    ("股价上涨", "上涨股价", &["股", "价", "上", "涨"], &["上", "涨", "股", "价"], 4, 2),
    ("a a b", "a b b", &["a", "a", "b"], &["a", "b", "b"], 2, 2),
    ("ＰＥ 12倍", "pe 12 倍", &["pe", "12", "倍"], &["pe", "12", "倍"], 3, 3),
    ("The Fed raised rates.", "fed raised rates", &["the", "fed", "raised", "rates"], &["fed", "raised", "rates"], 3, 3),
    ("营收增长10%", "营收增长 10%", &["营", "收", "增", "长", "10"], &["营", "收", "增", "长", "10"], 5, 5),
    ("a b c d e", "e d c b a", &["a", "b", "c", "d", "e"], &["e", "d", "c", "b", "a"], 5, 1),
    ("净利润下降", "利润", &["净", "利", "润", "下", "降"], &["利", "润"], 2, 2),
    ("x y", "z w", &["x", "y"], &["z", "w"], 0, 0),
    ("a b a b", "b a b a", &["a", "b", "a", "b"], &["b", "a", "b", "a"], 4, 3),
    (
        "央行 降准 0.5 个百分点",
        "央行降准0.5个百分点",
        &["央", "行", "降", "准", "0.5", "个", "百", "分", "点"],
        &["央", "行", "降", "准", "0.5", "个", "百", "分", "点"],
        9,
        9,
    ),
    ("buy hold sell", "SELL", &["buy", "hold", "sell"], &["sell"], 1, 1),
    ("银行 银行 银行", "银行", &["银", "行", "银", "行", "银", "行"], &["银", "行"], 2, 2),
    ("。，！", "", &[], &[], 0, 0),
    ("利好 positive", "positive 利空", &["利", "好", "positive"], &["positive", "利", "空"], 2, 1),
];
