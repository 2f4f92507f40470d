//! Synthetic financial corpus with one planted fact per document.

#![allow(dead_code)]

use chrono::NaiveDate;
use meff_core::knowledge::{DocKind, Document};
use rand::Rng;

const FILLER: &[&str] = &[
    "公司本季度营业收入保持稳定，市场需求逐步回暖。",
    "管理层表示将继续优化成本结构并提升运营效率。",
    "分析师认为行业竞争格局短期内不会发生明显变化。",
    "受原材料价格波动影响，毛利率出现小幅下滑。",
    "公司计划加大研发投入，推动产品结构升级。",
    "报告期内经营活动现金流量净额同比有所改善。",
    "宏观经济环境对企业融资成本产生一定压力。",
    "多家机构上调了对该板块的盈利预测。",
    "市场普遍关注货币政策变化对资产价格的影响。",
    "公司董事会审议通过了年度利润分配方案。",
    "The board approved a new buyback plan.",
    "Analysts expect margins to recover next year.",
];

/// Characters used only in company names, never in filler text.
const NAME_CHARS: &str = "甄琮璟瑜珩玹琨瑾璋琳骐骥鸾鹄麟翎蔚翊韬晟煦曜昀暄";

const METRICS: &[&str] = &["净利润", "营业收入", "研发费用", "经营现金流"];

pub struct Planted {
    pub doc_id: String,
    pub name: String,
    pub metric: &'static str,
    pub sentence: String,
}

pub fn company_name(i: usize) -> String {
    let chars: Vec<char> = NAME_CHARS.chars().collect();
    let n = chars.len();
    let (a, b) = (i % n, (i / n + i % n + 1) % n);
    format!("{}{}控股", chars[a], chars[b])
}

/// `n` documents; document `i` states one figure about company `i`.
pub fn synthetic_kb<R: Rng>(rng: &mut R, n: usize) -> (Vec<Document>, Vec<Planted>) {
    let mut docs = Vec::with_capacity(n);
    let mut planted = Vec::with_capacity(n);
    for i in 0..n {
        let name = company_name(i);
        let metric = METRICS[rng.random_range(0..METRICS.len())];
        let growth = rng.random_range(1..60);
        let sentence = format!("{name}{metric}同比增长{growth}%，{name}表示增长主要来自核心业务。");
        let mut sentences: Vec<String> = (0..rng.random_range(4..9))
            .map(|_| FILLER[rng.random_range(0..FILLER.len())].to_string())
            .collect();
        let at = rng.random_range(0..=sentences.len());
        sentences.insert(at, sentence.clone());
        let id = format!("doc-{i:04}");
        docs.push(Document {
            id: id.clone(),
            kind: if i % 3 == 0 { DocKind::ReportAbstract } else { DocKind::News },
            title: format!("{name}经营简报"),
            date: NaiveDate::from_ymd_opt(2023, 1 + (i % 12) as u32, 1 + (i % 28) as u32).unwrap(),
            source: "synthetic".into(),
            body: sentences.concat(),
        });
        planted.push(Planted { doc_id: id, name, metric, sentence });
    }
    (docs, planted)
}

const QUERY_TEMPLATES: &[&str] = &[
    "{name}的{metric}增长了多少？",
    "请问{name}{metric}的同比变化情况",
    "{name}{metric}同比增长主要来自哪里",
    "{metric}方面，{name}表现如何？",
];

pub fn planted_query(p: &Planted, k: usize) -> String {
    QUERY_TEMPLATES[k % QUERY_TEMPLATES.len()]
        .replace("{name}", &p.name)
        .replace("{metric}", p.metric)
}

/// Queries built from words that never occur in the corpus.
pub const ZERO_OVERLAP_QUERIES: &[&str] = &[
    "鼹鼠饕餮",
    "zyxwv qqq",
    "螳螂捕蝉",
    "xylophone 蝌蚪",
    "！？。",
];
