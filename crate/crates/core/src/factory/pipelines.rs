use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::data::{ConsultingInput, LabeledSample, SeedTask, Sources, Topic};
use super::teacher::{ClientError, TeacherClient, TeacherParams};
use super::templates::{PromptTemplate, Purpose, ShotMode, TemplateRegistry};
use super::{
    validate_computing, validate_record, Batch, Category, FactoryConfig, FactoryError, InstructionRecord, Reject,
    RejectReason, SCHEMA_VERSION,
};
use crate::dialogue::{Message, Role};
use crate::knowledge::{Bm25Params, Chunk, DocKind, KnowledgeError, KnowledgeIndex, RetrievalResult, TrainingRetrieval};

/// Seed tasks shown in each computing prompt.
const COMPUTING_DEMOS: usize = 3;

/// Question type of a retrieval-enhanced record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisCategory {
    Industry,
    Policy,
    Investment,
    Other,
}

impl AnalysisCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            AnalysisCategory::Industry => "industry",
            AnalysisCategory::Policy => "policy",
            AnalysisCategory::Investment => "investment",
            AnalysisCategory::Other => "other",
        }
    }

    /// Name used inside prompts.
    pub fn label(self) -> &'static str {
        match self {
            AnalysisCategory::Industry => "行业分析",
            AnalysisCategory::Policy => "政策分析",
            AnalysisCategory::Investment => "投资建议",
            AnalysisCategory::Other => "其他分析",
        }
    }

    pub fn default_mix() -> BTreeMap<AnalysisCategory, f64> {
        BTreeMap::from([
            (AnalysisCategory::Industry, 0.53),
            (AnalysisCategory::Policy, 0.13),
            (AnalysisCategory::Investment, 0.08),
            (AnalysisCategory::Other, 0.26),
        ])
    }
}

pub(super) fn validate_mix(mix: &BTreeMap<AnalysisCategory, f64>) -> Result<(), FactoryError> {
    if mix.is_empty() {
        return Err(FactoryError::InvalidConfig("category_mix is empty".into()));
    }
    if let Some((c, w)) = mix.iter().find(|(_, w)| !w.is_finite() || **w < 0.0) {
        return Err(FactoryError::InvalidConfig(format!("category_mix.{} = {w} is not a share", c.as_str())));
    }
    let sum: f64 = mix.values().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(FactoryError::InvalidConfig(format!("category_mix sums to {sum}, not 1")));
    }
    Ok(())
}

/// Integer counts summing to `n`, proportional to `mix` by largest remainder.
/// Ties in the remainder go to the earlier category.
pub fn quotas(mix: &BTreeMap<AnalysisCategory, f64>, n: usize) -> Vec<(AnalysisCategory, usize)> {
    let total: f64 = mix.values().sum();
    let mut parts: Vec<(AnalysisCategory, usize, f64)> = mix
        .iter()
        .map(|(c, w)| {
            let exact = w / total * n as f64;
            (*c, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = parts.iter().map(|p| p.1).sum();
    let mut order: Vec<usize> = (0..parts.len()).collect();
    order.sort_by(|&a, &b| parts[b].2.total_cmp(&parts[a].2).then(a.cmp(&b)));
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        parts[i].1 += 1;
    }
    parts.into_iter().map(|(c, k, _)| (c, k)).collect()
}

fn slots<'v>(pairs: &[(&'v str, &str)]) -> BTreeMap<&'v str, String> {
    pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
}

/// Teacher output with surrounding whitespace and a leading label removed.
fn clean(text: &str, label: &str) -> String {
    let t = text.trim();
    t.strip_prefix(label).unwrap_or(t).trim().to_string()
}

/// `问题：…答案：…`
fn parse_qa(text: &str) -> Option<(String, String)> {
    let q = text.find("问题：")? + "问题：".len();
    let a = q + text[q..].find("答案：")?;
    let question = text[q..a].trim();
    let answer = text[a + "答案：".len()..].trim();
    (!question.is_empty() && !answer.is_empty()).then(|| (question.to_string(), answer.to_string()))
}

/// One `用户：…助手：…` pair; anything after a further `用户：` is dropped.
fn parse_turn(text: &str) -> Option<(String, String)> {
    let user = format!("{}：", Role::Human.speaker());
    let assistant = format!("{}：", Role::Assistant.speaker());
    let rest = &text[text.find(&user)? + user.len()..];
    let a = rest.find(&assistant)?;
    let human = rest[..a].trim();
    let reply = &rest[a + assistant.len()..];
    let reply = reply.find(&user).map_or(reply, |end| &reply[..end]).trim();
    (!human.is_empty() && !reply.is_empty()).then(|| (human.to_string(), reply.to_string()))
}

fn render_history(messages: &[Message]) -> String {
    if messages.is_empty() {
        return "（无）".into();
    }
    messages
        .iter()
        .map(|m| format!("{}：{}", m.role.speaker(), m.text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_references(refs: &[RetrievalResult]) -> String {
    refs.iter()
        .enumerate()
        .map(|(i, r)| format!("[{}] {}\n{}", i + 1, r.title, r.chunk.text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn reference_meta(refs: &[RetrievalResult]) -> Value {
    Value::Array(
        refs.iter()
            .map(|r| {
                json!({
                    "doc_id": r.chunk.doc_id,
                    "seq": r.chunk.seq,
                    "score": r.score,
                    "injected": r.injected,
                    "guaranteed": r.guaranteed,
                })
            })
            .collect(),
    )
}

/// Seeded generator state shared by the pipelines of one run.
///
/// Teacher calls are issued one at a time, so the order of calls, and with
/// it every sampled choice, depends only on the seed.
pub struct Factory<'a> {
    teacher: &'a TeacherClient,
    templates: &'a TemplateRegistry,
    rng: ChaCha8Rng,
    generated_at: String,
    serial: BTreeMap<Category, usize>,
    batch: Batch,
}

impl<'a> Factory<'a> {
    pub fn new(teacher: &'a TeacherClient, templates: &'a TemplateRegistry, seed: u64) -> Self {
        Factory {
            teacher,
            templates,
            rng: ChaCha8Rng::seed_from_u64(seed),
            generated_at: FactoryConfig::default().generated_at,
            serial: BTreeMap::new(),
            batch: Batch::default(),
        }
    }

    pub fn with_generated_at(mut self, ts: impl Into<String>) -> Self {
        self.generated_at = ts.into();
        self
    }

    fn with_stream(mut self, stream: u64) -> Self {
        self.rng.set_stream(stream);
        self
    }

    fn take(&mut self) -> Batch {
        std::mem::take(&mut self.batch)
    }

    async fn ask(&mut self, prompt: &str) -> Result<String, FactoryError> {
        let params = TeacherParams::seeded(self.rng.random());
        match self.teacher.complete(prompt, &params).await {
            Ok(text) => Ok(text),
            Err(ClientError::BudgetExhausted(budget)) => Err(FactoryError::TeacherBudgetExceeded {
                budget,
                completed: Box::new(self.take()),
            }),
            Err(ClientError::Teacher(e)) => Err(e.into()),
        }
    }

    fn pick(&mut self, purpose: Purpose) -> Result<&'a PromptTemplate, FactoryError> {
        let templates = self.templates;
        let candidates = templates.by_purpose(purpose);
        if candidates.is_empty() {
            return Err(FactoryError::Template(format!("no template for {purpose:?}")));
        }
        Ok(candidates[self.rng.random_range(0..candidates.len())])
    }

    fn meta(&self, kind: &str, template: &PromptTemplate, source: &str) -> BTreeMap<String, Value> {
        BTreeMap::from([
            ("kind".to_string(), Value::from(kind)),
            ("template_id".to_string(), Value::from(template.id.as_str())),
            ("source".to_string(), Value::from(source)),
            ("generated_at".to_string(), Value::from(self.generated_at.as_str())),
        ])
    }

    fn reject(&mut self, category: Category, reason: RejectReason, detail: impl Into<String>, output: &str, meta: BTreeMap<String, Value>) {
        self.batch.rejects.push(Reject {
            category,
            reason,
            detail: detail.into(),
            output: output.to_string(),
            meta,
        });
    }

    /// Validates and appends a record; a failing record becomes a reject.
    fn emit(
        &mut self,
        category: Category,
        messages: Vec<Message>,
        context: Option<String>,
        meta: BTreeMap<String, Value>,
    ) -> bool {
        let n = self.serial.entry(category).or_insert(0);
        *n += 1;
        let record = InstructionRecord {
            schema_version: SCHEMA_VERSION,
            id: format!("{}-{:05}", category.as_str(), n),
            category,
            messages,
            context,
            meta,
        };
        match validate_record(&record) {
            Ok(()) => {
                self.batch.records.push(record);
                true
            }
            Err(e) => {
                let output = serde_json::to_string(&record.messages).unwrap_or_default();
                self.reject(category, RejectReason::ValidationFailed, e.to_string(), &output, record.meta);
                false
            }
        }
    }

    fn count(&self, category: Category) -> usize {
        self.batch.records.iter().filter(|r| r.category == category).count()
    }

    /// Consulting QA pairs, cycling through `inputs` until `n` are accepted.
    /// Terms use a term template whose reply carries both question and
    /// answer; questions use the answer template.
    pub async fn gen_consulting_qa(&mut self, inputs: &[ConsultingInput], n: usize) -> Result<Batch, FactoryError> {
        self.take();
        self.consulting_qa(inputs, n).await?;
        Ok(self.take())
    }

    async fn consulting_qa(&mut self, inputs: &[ConsultingInput], n: usize) -> Result<(), FactoryError> {
        if n == 0 {
            return Err(FactoryError::EmptyInput("n must be at least 1"));
        }
        if inputs.is_empty() {
            return Err(FactoryError::EmptyInput("no terms or questions"));
        }
        let target = self.count(Category::Consulting) + n;
        let mut i = 0;
        while self.count(Category::Consulting) < target {
            let input = &inputs[i % inputs.len()];
            i += 1;
            match input {
                ConsultingInput::Term(term) => {
                    let tpl = self.pick(Purpose::TermQa)?;
                    let prompt = tpl.render(&slots(&[("term", term)]))?;
                    let out = self.ask(&prompt).await?;
                    let meta = self.meta("term_qa", tpl, term);
                    match parse_qa(&out) {
                        Some((q, a)) if q.contains(term.as_str()) => {
                            self.emit(Category::Consulting, vec![Message::human(q), Message::assistant(a)], None, meta);
                        }
                        Some(_) => self.reject(
                            Category::Consulting,
                            RejectReason::MalformedTeacherOutput,
                            "question does not mention the term",
                            &out,
                            meta,
                        ),
                        None => self.reject(
                            Category::Consulting,
                            RejectReason::MalformedTeacherOutput,
                            "expected 问题：… 答案：…",
                            &out,
                            meta,
                        ),
                    }
                }
                ConsultingInput::Question(question) => {
                    let tpl = self.pick(Purpose::QuestionAnswer)?;
                    let prompt = tpl.render(&slots(&[("question", question)]))?;
                    let out = self.ask(&prompt).await?;
                    let meta = self.meta("question_answer", tpl, question);
                    let answer = clean(&out, "答案：");
                    if answer.is_empty() {
                        self.reject(Category::Consulting, RejectReason::MalformedTeacherOutput, "empty answer", &out, meta);
                    } else {
                        self.emit(
                            Category::Consulting,
                            vec![Message::human(question.clone()), Message::assistant(answer)],
                            None,
                            meta,
                        );
                    }
                }
            }
        }
        Ok(())
    }

    /// One multi-turn dialogue about a forum topic, generated a turn at a
    /// time. A turn the teacher fails to produce twice rejects the dialogue.
    pub async fn gen_self_chat(&mut self, topic: &Topic, n_turns: usize) -> Result<Batch, FactoryError> {
        self.take();
        self.self_chat(topic, n_turns).await?;
        Ok(self.take())
    }

    async fn self_chat(&mut self, topic: &Topic, n_turns: usize) -> Result<(), FactoryError> {
        if n_turns == 0 {
            return Err(FactoryError::EmptyInput("n_turns must be at least 1"));
        }
        let tpl = self.pick(Purpose::SelfChatTurn)?;
        let mut meta = self.meta("self_chat", tpl, &topic.id);
        meta.insert("topic".into(), Value::from(topic.topic.as_str()));
        let mut messages: Vec<Message> = Vec::with_capacity(2 * n_turns);
        for turn in 0..n_turns {
            let prompt = tpl.render(&slots(&[
                ("topic", &topic.topic),
                ("context", &topic.context),
                ("history", &render_history(&messages)),
            ]))?;
            let mut parsed = None;
            let mut last = String::new();
            for _ in 0..2 {
                last = self.ask(&prompt).await?;
                parsed = parse_turn(&last);
                if parsed.is_some() {
                    break;
                }
            }
            match parsed {
                Some((human, assistant)) => {
                    messages.push(Message::human(human));
                    messages.push(Message::assistant(assistant));
                }
                None => {
                    self.reject(
                        Category::Consulting,
                        RejectReason::MalformedTeacherOutput,
                        format!("turn {} has no 用户/助手 pair after a retry", turn + 1),
                        &last,
                        meta,
                    );
                    return Ok(());
                }
            }
        }
        self.emit(Category::Consulting, messages, None, meta);
        Ok(())
    }

    /// One task instruction per sample, with a seeded choice among the
    /// templates for the sample's task.
    pub fn gen_task_instructions(
        &mut self,
        samples: &[LabeledSample],
        templates: &[&'a PromptTemplate],
    ) -> Result<Batch, FactoryError> {
        self.take();
        for target in samples {
            let candidates: Vec<&PromptTemplate> = templates
                .iter()
                .copied()
                .filter(|t| t.task.as_deref() == Some(target.task.as_str()))
                .collect();
            if candidates.is_empty() {
                return Err(FactoryError::Template(format!("no template for task `{}`", target.task)));
            }
            let tpl = candidates[self.rng.random_range(0..candidates.len())];
            self.task_record(target, samples, tpl)?;
        }
        Ok(self.take())
    }

    fn task_record(
        &mut self,
        target: &LabeledSample,
        dataset: &[LabeledSample],
        tpl: &PromptTemplate,
    ) -> Result<(), FactoryError> {
        let label = target.fields.get("label").ok_or_else(|| FactoryError::SlotMismatch {
            template: tpl.id.clone(),
            slot: "label".into(),
        })?;
        let mut values: BTreeMap<&str, String> =
            target.fields.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
        let mut demo_ids = Vec::new();
        if let ShotMode::FewShot(k) = tpl.shot_mode {
            let pool: Vec<&LabeledSample> = dataset
                .iter()
                .filter(|s| s.task == target.task && s.id != target.id)
                .collect();
            if pool.len() < k {
                return Err(FactoryError::InsufficientSamplesForFewShot {
                    task: target.task.clone(),
                    needed: k + 1,
                    available: pool.len() + 1,
                });
            }
            let mut demos = Vec::with_capacity(k);
            for i in sample(&mut self.rng, pool.len(), k) {
                let demo = pool[i];
                let mut v: BTreeMap<&str, String> =
                    demo.fields.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
                if let Some(l) = demo.fields.get("label") {
                    v.insert("label", tpl.verbalize(l).to_string());
                }
                demos.push(tpl.render_example(&v)?);
                demo_ids.push(Value::from(demo.id.as_str()));
            }
            values.insert("examples", demos.join("\n\n"));
        }
        let prompt = tpl.render(&values)?;
        let mut meta = self.meta("task", tpl, &target.id);
        meta.insert("task".into(), Value::from(target.task.as_str()));
        if !demo_ids.is_empty() {
            meta.insert("demonstrations".into(), Value::Array(demo_ids));
        }
        self.emit(
            Category::Task,
            vec![Message::human(prompt), Message::assistant(tpl.verbalize(label))],
            None,
            meta,
        );
        Ok(())
    }

    /// A question and an answer per chunk, two teacher calls each; the chunk
    /// becomes the record's context.
    pub async fn gen_reading_comprehension(&mut self, chunks: &[Chunk]) -> Result<Batch, FactoryError> {
        self.take();
        if chunks.is_empty() {
            return Err(FactoryError::EmptyInput("no chunks"));
        }
        for chunk in chunks {
            self.reading_comprehension(chunk).await?;
        }
        Ok(self.take())
    }

    async fn reading_comprehension(&mut self, chunk: &Chunk) -> Result<bool, FactoryError> {
        let source = format!("{}#{}", chunk.doc_id, chunk.seq);
        let q_tpl = self.pick(Purpose::RcQuestion)?;
        let out = self.ask(&q_tpl.render(&slots(&[("passage", &chunk.text)]))?).await?;
        let question = clean(&out, "问题：");
        let mut meta = self.meta("reading_comprehension", q_tpl, &source);
        if question.is_empty() {
            self.reject(Category::Task, RejectReason::MalformedTeacherOutput, "empty question", &out, meta);
            return Ok(false);
        }
        let a_tpl = self.pick(Purpose::RcAnswer)?;
        meta.insert("answer_template_id".into(), Value::from(a_tpl.id.as_str()));
        let out = self
            .ask(&a_tpl.render(&slots(&[("passage", &chunk.text), ("question", &question)]))?)
            .await?;
        let answer = clean(&out, "答案：");
        if answer.is_empty() {
            self.reject(Category::Task, RejectReason::MalformedTeacherOutput, "empty answer", &out, meta);
            return Ok(false);
        }
        Ok(self.emit(
            Category::Task,
            vec![Message::human(question), Message::assistant(answer)],
            Some(chunk.text.clone()),
            meta,
        ))
    }

    /// Self-instruct loop: three sampled demonstrations per prompt, accepted
    /// only if every embedded command re-executes to its embedded result.
    /// Accepted problems join the demonstration pool.
    pub async fn gen_computing(&mut self, seeds: &[SeedTask], target_n: usize) -> Result<Batch, FactoryError> {
        self.take();
        self.computing(seeds, target_n).await?;
        Ok(self.take())
    }

    async fn computing(&mut self, seeds: &[SeedTask], target_n: usize) -> Result<(), FactoryError> {
        if seeds.len() < COMPUTING_DEMOS {
            return Err(FactoryError::NotEnoughSeeds {
                needed: COMPUTING_DEMOS,
                available: seeds.len(),
            });
        }
        for seed in seeds {
            seed.validate()?;
        }
        let mut pool: Vec<(String, String, String)> = seeds
            .iter()
            .map(|s| (s.id.clone(), s.question.clone(), s.answer_with_commands.clone()))
            .collect();
        let target = self.count(Category::Computing) + target_n;
        while self.count(Category::Computing) < target {
            let tpl = self.pick(Purpose::Computing)?;
            let k = match tpl.shot_mode {
                ShotMode::FewShot(k) => k,
                ShotMode::ZeroShot => COMPUTING_DEMOS,
            };
            if k > pool.len() {
                return Err(FactoryError::NotEnoughSeeds { needed: k, available: pool.len() });
            }
            let picked: Vec<usize> = sample(&mut self.rng, pool.len(), k).into_vec();
            let examples = picked
                .iter()
                .map(|&i| tpl.render_example(&slots(&[("question", &pool[i].1), ("answer", &pool[i].2)])))
                .collect::<Result<Vec<_>, _>>()?
                .join("\n\n");
            let out = self.ask(&tpl.render(&slots(&[("examples", &examples)]))?).await?;
            let seed_ids = picked.iter().map(|&i| pool[i].0.as_str()).collect::<Vec<_>>().join(",");
            let mut meta = self.meta("computing", tpl, "self_instruct");
            meta.insert("seed_id".into(), Value::from(seed_ids));
            let Some((question, answer)) = parse_qa(&out) else {
                self.reject(
                    Category::Computing,
                    RejectReason::MalformedTeacherOutput,
                    "expected 问题：… 答案：…",
                    &out,
                    meta,
                );
                continue;
            };
            if let Err(e) = validate_computing(&answer) {
                self.reject(Category::Computing, RejectReason::ValidationFailed, e.to_string(), &out, meta);
                continue;
            }
            let accepted = self.emit(
                Category::Computing,
                vec![Message::human(question.clone()), Message::assistant(answer.clone())],
                None,
                meta,
            );
            if accepted {
                let id = self.batch.records.last().map(|r| r.id.clone()).unwrap_or_default();
                pool.push((id, question, answer));
            }
        }
        Ok(())
    }

    /// Question from a sampled document, retrieval with the source document
    /// guaranteed and noise injected, then an answer over the references.
    /// Question types follow `mix` exactly via largest-remainder quotas.
    pub async fn gen_retrieval_enhanced(
        &mut self,
        kb: &KnowledgeIndex,
        target_n: usize,
        mix: &BTreeMap<AnalysisCategory, f64>,
        opts: &TrainingRetrieval,
    ) -> Result<Batch, FactoryError> {
        self.take();
        self.retrieval_enhanced(kb, target_n, mix, opts).await?;
        Ok(self.take())
    }

    async fn retrieval_enhanced(
        &mut self,
        kb: &KnowledgeIndex,
        target_n: usize,
        mix: &BTreeMap<AnalysisCategory, f64>,
        opts: &TrainingRetrieval,
    ) -> Result<(), FactoryError> {
        if kb.documents().is_empty() || kb.chunks().is_empty() {
            return Err(FactoryError::EmptyKnowledgeBase);
        }
        validate_mix(mix)?;
        opts.validate()?;
        let mut labels: Vec<AnalysisCategory> = quotas(mix, target_n)
            .into_iter()
            .flat_map(|(c, k)| std::iter::repeat_n(c, k))
            .collect();
        labels.shuffle(&mut self.rng);
        let templates = self.templates;
        for analysis in labels {
            loop {
                let doc = &kb.documents()[self.rng.random_range(0..kb.documents().len())];
                let kind = match doc.kind {
                    DocKind::ReportAbstract => DocKind::ReportAbstract,
                    DocKind::News | DocKind::Other => DocKind::News,
                };
                let candidates: Vec<&PromptTemplate> = templates
                    .by_purpose(Purpose::RetrievalQuestion)
                    .into_iter()
                    .filter(|t| t.doc_kind.is_none_or(|k| k == kind))
                    .collect();
                if candidates.is_empty() {
                    return Err(FactoryError::Template(format!("no question template for {kind:?}")));
                }
                let q_tpl = candidates[self.rng.random_range(0..candidates.len())];
                let prompt = q_tpl.render(&slots(&[
                    ("analysis", analysis.label()),
                    ("title", &doc.title),
                    ("body", &doc.body),
                ]))?;
                let out = self.ask(&prompt).await?;
                let question = clean(&out, "问题：");
                let mut meta = self.meta("retrieval_enhanced", q_tpl, &doc.id);
                meta.insert("analysis_category".into(), Value::from(analysis.as_str()));
                if question.is_empty() {
                    self.reject(Category::RetrievalEnhanced, RejectReason::MalformedTeacherOutput, "empty question", &out, meta);
                    continue;
                }
                let refs = kb.retrieve_for_training(&question, opts, Some(&doc.id), &mut self.rng)?;
                if refs.is_empty() {
                    self.reject(Category::RetrievalEnhanced, RejectReason::ValidationFailed, "no references", &question, meta);
                    continue;
                }
                let references = render_references(&refs);
                let a_tpl = self.pick(Purpose::RetrievalAnswer)?;
                let out = self
                    .ask(&a_tpl.render(&slots(&[
                        ("references", &references),
                        ("question", &question),
                        ("analysis", analysis.label()),
                    ]))?)
                    .await?;
                let answer = clean(&out, "答案：");
                meta.insert("answer_template_id".into(), Value::from(a_tpl.id.as_str()));
                meta.insert("references".into(), reference_meta(&refs));
                if answer.is_empty() {
                    self.reject(Category::RetrievalEnhanced, RejectReason::MalformedTeacherOutput, "empty answer", &out, meta);
                    continue;
                }
                if self.emit(
                    Category::RetrievalEnhanced,
                    vec![Message::human(question), Message::assistant(answer)],
                    Some(references),
                    meta,
                ) {
                    break;
                }
            }
        }
        Ok(())
    }
}

fn build_kb(sources: &Sources, max_chunk_tokens: usize) -> Result<KnowledgeIndex, FactoryError> {
    match KnowledgeIndex::build(sources.kb.clone(), Bm25Params::default(), max_chunk_tokens) {
        Err(KnowledgeError::EmptyCorpus) => Err(FactoryError::EmptyKnowledgeBase),
        other => Ok(other?),
    }
}

fn share(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).min(n)
}

/// Generates `n` records of one category from `sources`.
///
/// Consulting mixes term QA with self-chat dialogues; task mixes labeled-task
/// instructions with reading comprehension over the knowledge base.
pub async fn make_data(
    category: Category,
    n: usize,
    config: &FactoryConfig,
    sources: &Sources,
    teacher: &TeacherClient,
    templates: &TemplateRegistry,
) -> Result<Batch, FactoryError> {
    config.validate()?;
    if n == 0 {
        return Err(FactoryError::EmptyInput("n must be at least 1"));
    }
    let stream = Category::ALL.iter().position(|c| *c == category).unwrap_or(0) as u64;
    let mut f = Factory::new(teacher, templates, config.seed)
        .with_generated_at(config.generated_at.clone())
        .with_stream(stream);
    match category {
        Category::Consulting => {
            let chats = share(n, config.self_chat_share);
            if n > chats {
                f.consulting_qa(&sources.terms, n - chats).await?;
            }
            if chats > 0 {
                if sources.topics.is_empty() {
                    return Err(FactoryError::EmptyInput("no forum topics"));
                }
                let target = f.count(Category::Consulting) + chats;
                let mut i = 0;
                while f.count(Category::Consulting) < target {
                    f.self_chat(&sources.topics[i % sources.topics.len()], config.self_chat_turns)
                        .await?;
                    i += 1;
                }
            }
        }
        Category::Task => {
            let reading = share(n, config.reading_share);
            if n > reading {
                if sources.task_samples.is_empty() {
                    return Err(FactoryError::EmptyInput("no labeled task samples"));
                }
                let task_templates = templates.by_purpose(Purpose::Task);
                for i in 0..n - reading {
                    let target = &sources.task_samples[i % sources.task_samples.len()];
                    let few = f.rng.random_bool(config.few_shot_share);
                    let for_task: Vec<&PromptTemplate> = task_templates
                        .iter()
                        .copied()
                        .filter(|t| t.task.as_deref() == Some(target.task.as_str()))
                        .collect();
                    let preferred: Vec<&PromptTemplate> = for_task
                        .iter()
                        .copied()
                        .filter(|t| matches!(t.shot_mode, ShotMode::FewShot(_)) == few)
                        .collect();
                    let pool = if preferred.is_empty() { &for_task } else { &preferred };
                    if pool.is_empty() {
                        return Err(FactoryError::Template(format!("no template for task `{}`", target.task)));
                    }
                    let tpl = pool[f.rng.random_range(0..pool.len())];
                    f.task_record(target, &sources.task_samples, tpl)?;
                }
            }
            if reading > 0 {
                let kb = build_kb(sources, config.max_chunk_tokens)?;
                let mut order: Vec<usize> = (0..kb.chunks().len()).collect();
                order.shuffle(&mut f.rng);
                let target = f.count(Category::Task) + reading;
                let mut i = 0;
                while f.count(Category::Task) < target {
                    f.reading_comprehension(&kb.chunks()[order[i % order.len()]]).await?;
                    i += 1;
                }
            }
        }
        Category::Computing => f.computing(&sources.seeds, n).await?,
        Category::RetrievalEnhanced => {
            let kb = build_kb(sources, config.max_chunk_tokens)?;
            f.retrieval_enhanced(&kb, n, &config.category_mix, &config.retrieval)
                .await?
        }
    }
    Ok(f.take())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quotas_follow_largest_remainder() {
        let mix = AnalysisCategory::default_mix();
        let q: BTreeMap<_, _> = quotas(&mix, 400).into_iter().collect();
        assert_eq!(q[&AnalysisCategory::Industry], 212);
        assert_eq!(q[&AnalysisCategory::Policy], 52);
        assert_eq!(q[&AnalysisCategory::Investment], 32);
        assert_eq!(q[&AnalysisCategory::Other], 104);
        let q: Vec<_> = quotas(&mix, 10).into_iter().map(|(_, k)| k).collect();
        // 5.3, 1.3, 0.8, 2.6 -> floors 5, 1, 0, 2; remainders .8 and .6 win.
        assert_eq!(q, [5, 1, 1, 3]);
        assert_eq!(quotas(&mix, 0).iter().map(|p| p.1).sum::<usize>(), 0);
    }

    #[test]
    fn teacher_replies_parse() {
        assert_eq!(
            parse_qa("问题：什么是久期？\n答案：久期衡量债券价格对利率的敏感度。"),
            Some(("什么是久期？".into(), "久期衡量债券价格对利率的敏感度。".into()))
        );
        assert_eq!(parse_qa("答案：只有答案"), None);
        assert_eq!(
            parse_turn("用户：你好\n助手：你好，有什么可以帮你？\n用户：多余"),
            Some(("你好".into(), "你好，有什么可以帮你？".into()))
        );
        assert_eq!(parse_turn("助手：只有回答"), None);
        assert_eq!(clean(" 问题：为什么？ ", "问题："), "为什么？");
    }
}
