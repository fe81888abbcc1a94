//! End-to-end pipeline pieces shared by the command-line tool and the
//! acceptance suite: data preparation, training, corpus decoding,
//! post-processing and evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augmentation::{annotate_dataset, annotate_uniform, build_augmented_input, SamplerConfig};
use crate::constraints::ConstraintSet;
use crate::dataset::SentencePair;
use crate::decoding::{decode, DecodeConfig, DecodeMode, Hypothesis, Scorer};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport};
use crate::model::{
    init_model, train, ConstraintFeed, EnsembleScorer, EnsembleSpace, Model, ModelConfig, ModelScorer, TrainConfig,
    TrainOutcome,
};
use crate::postprocess::postprocess;
use crate::text::detokenize;
use crate::toy::{generate_toy_corpus, ToyTaskSpec};
use crate::vocab::{build_vocab, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub toy: ToyTaskSpec,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
    /// Test constraints per sentence are drawn uniformly from this range.
    pub test_constraints_min: usize,
    pub test_constraints_max: usize,
    /// Present test constraints in random rather than reference order.
    pub shuffle_constraints: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            toy: ToyTaskSpec::default(),
            train_size: 2000,
            test_size: 500,
            seed: 1,
            test_constraints_min: 1,
            test_constraints_max: 4,
            shuffle_constraints: false,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        self.toy.validate()?;
        if self.train_size == 0 || self.test_size == 0 {
            return Err(Error::config("train_size and test_size must be >= 1"));
        }
        if self.test_constraints_min > self.test_constraints_max {
            return Err(Error::config("test_constraints_min exceeds test_constraints_max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    /// Training pairs with constraints sampled from the training distribution.
    pub train: Vec<SentencePair>,
    /// Test pairs with 1..=4 (by default) reference words as constraints.
    pub test: Vec<SentencePair>,
    pub vocab: Vocabulary,
}

/// Generate the toy corpus, split it, sample constraints and build the
/// vocabulary (from the training split). Train and test constraints use
/// independent seeds.
pub fn prepare_data(cfg: &DataConfig, sampler: &SamplerConfig) -> Result<PreparedData> {
    cfg.validate()?;
    let corpus = generate_toy_corpus(&cfg.toy, cfg.train_size + cfg.test_size, cfg.seed)?;
    let (train, test) = corpus.split_at(cfg.train_size);
    let train = annotate_dataset(train, sampler, crate::derive_seed(cfg.seed, "train-constraints"), false)?;
    let test = annotate_uniform(
        test,
        cfg.test_constraints_min,
        cfg.test_constraints_max,
        crate::derive_seed(cfg.seed, "test-constraints"),
        cfg.shuffle_constraints,
    )?;
    let surfaces: Vec<&str> = train.iter().flat_map(|p| [p.source.as_str(), p.target.as_str()]).collect();
    let vocab = build_vocab(&surfaces)?;
    Ok(PreparedData { train, test, vocab })
}

/// Copy of `pairs` with each source token dropped with probability `rate`
/// (at least one token is kept). Ids get a `-noisy` suffix.
pub fn synthesize_noisy(pairs: &[SentencePair], rate: f64, seed: u64) -> Vec<SentencePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "noisy"));
    pairs
        .iter()
        .map(|p| {
            let toks: Vec<&str> = p.source.split_whitespace().collect();
            let mut kept: Vec<&str> = toks.iter().copied().filter(|_| !rng.random_bool(rate)).collect();
            if kept.is_empty() {
                kept.push(toks[rng.random_range(0..toks.len())]);
            }
            SentencePair { id: format!("{}-noisy", p.id), source: kept.join(" "), ..p.clone() }
        })
        .collect()
}

/// Model configuration sized for `vocab` and `sampler`.
pub fn model_config_for(vocab: &Vocabulary, sampler: &SamplerConfig, base: &ModelConfig) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        n_segments: sampler.n_segments(),
        max_source_positions: sampler.max_source_positions,
        ..base.clone()
    }
}

/// Initialise from `init_seed` and train on `pairs`.
pub fn train_model(
    pairs: &[SentencePair],
    vocab: &Vocabulary,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    init_seed: u64,
) -> Result<TrainOutcome> {
    let model = init_model(model_cfg, init_seed)?;
    train(model, pairs, vocab, train_cfg)
}

/// Two phases: train on clean plus token-dropped sources, then continue on
/// clean data alone. Each phase runs `train_cfg.steps` steps.
pub fn train_two_phase(
    pairs: &[SentencePair],
    vocab: &Vocabulary,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    init_seed: u64,
    noise_rate: f64,
) -> Result<TrainOutcome> {
    let mut mixed = pairs.to_vec();
    mixed.extend(synthesize_noisy(pairs, noise_rate, train_cfg.seed));
    let first = train_model(&mixed, vocab, model_cfg, train_cfg, init_seed)?;
    let second_cfg = TrainConfig { seed: crate::derive_seed(train_cfg.seed, "fine-tune"), ..train_cfg.clone() };
    let second = train(first.model, pairs, vocab, &second_cfg)?;
    let mut losses = first.losses;
    losses.extend(second.losses);
    Ok(TrainOutcome { losses, ..second })
}

/// How the encoder input of a test sentence is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    /// Source only.
    Plain,
    /// Source followed by the sentence's constraints.
    Augmented,
}

impl InputKind {
    pub fn feed(self) -> ConstraintFeed {
        match self {
            InputKind::Plain => ConstraintFeed::None,
            InputKind::Augmented => ConstraintFeed::Resample,
        }
    }
}

/// One decoded test sentence, as written to the decoder's JSONL output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedRecord {
    pub id: String,
    /// Detokenized output text.
    pub output: String,
    pub score: f64,
    pub finished: bool,
    pub tokens_met: usize,
    pub beam: usize,
    pub mode: DecodeMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repairs: Option<usize>,
}

/// A set of models decoded together (one model, or an ensemble).
#[derive(Debug, Clone, Copy)]
pub struct System<'a> {
    pub models: &'a [Model],
    pub input: InputKind,
    pub space: EnsembleSpace,
}

impl<'a> System<'a> {
    pub fn single(model: &'a Model, input: InputKind) -> Self {
        Self { models: std::slice::from_ref(model), input, space: EnsembleSpace::Prob }
    }
}

fn to_record(h: &Hypothesis, pair: &SentencePair, vocab: &Vocabulary, cfg: &DecodeConfig) -> Result<DecodedRecord> {
    Ok(DecodedRecord {
        id: pair.id.clone(),
        output: detokenize(&vocab.decode_tokens(h.content())?),
        score: h.score,
        finished: h.finished,
        tokens_met: h.tokens_met(),
        beam: cfg.beam_size,
        mode: cfg.mode,
        repairs: None,
    })
}

/// Decode one sentence; a constrained search that fails yields its best
/// partial hypothesis.
pub fn decode_pair(
    system: &System,
    pair: &SentencePair,
    vocab: &Vocabulary,
    sampler: &SamplerConfig,
    cfg: &DecodeConfig,
) -> Result<Hypothesis> {
    let source = vocab.encode(&pair.source);
    let cs = ConstraintSet::from_surfaces(vocab, &pair.constraints)?;
    let layout = match system.input {
        InputKind::Plain => ConstraintSet::empty(),
        InputKind::Augmented => cs.clone(),
    };
    let aug = build_augmented_input(&source, &layout, vocab, sampler)?;
    let mut scorer: Box<dyn Scorer + '_> = if system.models.len() == 1 {
        Box::new(ModelScorer::new(&system.models[0], &aug)?)
    } else {
        Box::new(EnsembleScorer::new(system.models, &aug, system.space)?)
    };
    match decode(scorer.as_mut(), source.len(), &cs, cfg) {
        Ok(h) => Ok(h),
        Err(Error::ConstraintFailure { best, .. }) => Ok(*best),
        Err(e) => Err(e),
    }
}

/// Decode every pair. Sentences are decoded in parallel; the output keeps
/// the input order.
pub fn decode_corpus(
    system: &System,
    pairs: &[SentencePair],
    vocab: &Vocabulary,
    sampler: &SamplerConfig,
    cfg: &DecodeConfig,
) -> Result<Vec<DecodedRecord>> {
    use rayon::prelude::*;
    pairs.par_iter().map(|p| to_record(&decode_pair(system, p, vocab, sampler, cfg)?, p, vocab, cfg)).collect()
}

fn check_aligned(records: &[DecodedRecord], pairs: &[SentencePair]) -> Result<()> {
    if records.len() != pairs.len() {
        return Err(Error::data(format!("{} outputs for {} sentences", records.len(), pairs.len())));
    }
    if let Some((r, p)) = records.iter().zip(pairs).find(|(r, p)| r.id != p.id) {
        return Err(Error::data(format!("output id {} does not match sentence id {}", r.id, p.id)));
    }
    Ok(())
}

/// Apply OOV restoration and spacing repair to every output.
pub fn postprocess_records(records: &[DecodedRecord], pairs: &[SentencePair]) -> Result<Vec<DecodedRecord>> {
    check_aligned(records, pairs)?;
    Ok(records
        .iter()
        .zip(pairs)
        .map(|(r, p)| {
            let fixed = postprocess(&r.output, &p.constraints);
            DecodedRecord { output: fixed.output, repairs: Some(r.repairs.unwrap_or(0) + fixed.repairs), ..r.clone() }
        })
        .collect())
}

/// Score outputs against references and constraints.
pub fn evaluate_records(records: &[DecodedRecord], pairs: &[SentencePair]) -> Result<EvalReport> {
    check_aligned(records, pairs)?;
    let ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    let hyps: Vec<&str> = records.iter().map(|r| r.output.as_str()).collect();
    let refs: Vec<&str> = pairs.iter().map(|p| p.target.as_str()).collect();
    let cons: Vec<Vec<String>> = pairs.iter().map(|p| p.constraints.clone()).collect();
    evaluate(&ids, &hyps, &refs, &cons)
}

/// Share of sentences whose output finished with every constraint token met.
pub fn completion_rate(records: &[DecodedRecord], pairs: &[SentencePair], vocab: &Vocabulary) -> Result<f64> {
    check_aligned(records, pairs)?;
    if records.is_empty() {
        return Ok(100.0);
    }
    let mut done = 0;
    for (r, p) in records.iter().zip(pairs) {
        let total = ConstraintSet::from_surfaces(vocab, &p.constraints)?.total_tokens();
        done += usize::from(r.finished && r.tokens_met == total);
    }
    Ok(100.0 * done as f64 / records.len() as f64)
}

/// The comparison grid, one row per setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// (a) unconstrained baseline.
    Base,
    /// (b) baseline with constrained decoding.
    BaseLcd,
    /// (c) constraint-augmented input, plain decoding.
    Leca,
    /// (d) constraint-augmented input with constrained decoding.
    LecaLcd,
    /// (e) ensemble of augmented models with constrained decoding.
    LecaLcdEnsemble,
}

impl Setting {
    pub const ALL: [Setting; 5] =
        [Setting::Base, Setting::BaseLcd, Setting::Leca, Setting::LecaLcd, Setting::LecaLcdEnsemble];

    pub fn label(self, ensemble_size: usize) -> String {
        match self {
            Setting::Base => "(a) Base".into(),
            Setting::BaseLcd => "(b) Base + LCD".into(),
            Setting::Leca => "(c) LeCA".into(),
            Setting::LecaLcd => "(d) LeCA + LCD".into(),
            Setting::LecaLcdEnsemble => format!("(e) LeCA + LCD x{ensemble_size}"),
        }
    }

    pub fn input(self) -> InputKind {
        match self {
            Setting::Base | Setting::BaseLcd => InputKind::Plain,
            _ => InputKind::Augmented,
        }
    }

    pub fn is_constrained(self) -> bool {
        !matches!(self, Setting::Base | Setting::Leca)
    }
}

/// Decoding settings of an experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunDecodeConfig {
    /// Beam of the unconstrained rows.
    pub beam_size: usize,
    /// Beam of the constrained rows.
    pub lcd_beam: usize,
    /// Constrained search used by the LCD rows and the sweep.
    pub lcd_mode: DecodeMode,
    pub length_penalty: f64,
    pub max_len_ratio: f64,
    pub max_len_offset: usize,
    /// Beam sizes of the sweep.
    pub sweep_beams: Vec<usize>,
}

impl Default for RunDecodeConfig {
    fn default() -> Self {
        let d = DecodeConfig::default();
        Self {
            beam_size: d.beam_size,
            lcd_beam: 2,
            lcd_mode: DecodeMode::Dba,
            length_penalty: d.length_penalty,
            max_len_ratio: d.max_len_ratio,
            max_len_offset: d.max_len_offset,
            sweep_beams: vec![1, 2, 4, 8, 16],
        }
    }
}

impl RunDecodeConfig {
    pub fn config(&self, mode: DecodeMode, beam_size: usize) -> DecodeConfig {
        DecodeConfig {
            beam_size,
            max_len_ratio: self.max_len_ratio,
            max_len_offset: self.max_len_offset,
            length_penalty: self.length_penalty,
            mode,
        }
    }

    /// Decoding configuration of one grid row.
    pub fn for_setting(&self, setting: Setting) -> DecodeConfig {
        if setting.is_constrained() {
            self.config(self.lcd_mode, self.lcd_beam)
        } else {
            self.config(DecodeMode::Plain, self.beam_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lcd_mode == DecodeMode::Plain {
            return Err(Error::config("lcd_mode must be gbs or dba"));
        }
        self.config(DecodeMode::Plain, self.beam_size).validate()?;
        self.config(self.lcd_mode, self.lcd_beam).validate()?;
        if self.sweep_beams.contains(&0) {
            return Err(Error::config("sweep beams must be >= 1"));
        }
        Ok(())
    }
}

/// Optional pretrain-then-fine-tune schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoPhaseConfig {
    pub enabled: bool,
    /// Token-drop rate of the synthetic noisy copy.
    pub noise_rate: f64,
}

impl Default for TwoPhaseConfig {
    fn default() -> Self {
        Self { enabled: false, noise_rate: 0.15 }
    }
}

/// Everything a toy experiment depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Schema version of the configuration file.
    pub version: u32,
    pub seed: u64,
    pub data: DataConfig,
    pub sampler: SamplerConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub two_phase: TwoPhaseConfig,
    pub decode: RunDecodeConfig,
    /// Number of augmented models trained (the ensemble members).
    pub ensemble_size: usize,
    pub ensemble_space: EnsembleSpace,
}

pub const CONFIG_VERSION: u32 = 1;

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 1,
            data: DataConfig {
                toy: ToyTaskSpec {
                    ambiguous_fraction: 0.3,
                    variants: 3,
                    split_fraction: 0.2,
                    reorder_window: 2,
                    ..ToyTaskSpec::default()
                },
                ..DataConfig::default()
            },
            sampler: SamplerConfig::default(),
            model: ModelConfig { label_smoothing: 0.0, dropout: 0.0, ..ModelConfig::default() },
            train: TrainConfig { steps: 2000, max_lr: 6e-3, ..TrainConfig::default() },
            two_phase: TwoPhaseConfig::default(),
            decode: RunDecodeConfig::default(),
            ensemble_size: 4,
            ensemble_space: EnsembleSpace::Prob,
        }
    }
}

/// Which training input a model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Base,
    Leca,
}

impl SystemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SystemKind::Base => "base",
            SystemKind::Leca => "leca",
        }
    }

    pub fn input(self) -> InputKind {
        match self {
            SystemKind::Base => InputKind::Plain,
            SystemKind::Leca => InputKind::Augmented,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.data.validate()?;
        self.sampler.validate()?;
        self.train.validate()?;
        self.decode.validate()?;
        if self.ensemble_size == 0 {
            return Err(Error::config("ensemble_size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.two_phase.noise_rate) {
            return Err(Error::config("two_phase.noise_rate must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Data configuration with the run seed applied.
    pub fn data_config(&self) -> DataConfig {
        DataConfig { seed: self.seed, ..self.data.clone() }
    }

    /// Training configuration of member `index` of `kind`.
    pub fn train_config(&self, kind: SystemKind, index: usize) -> TrainConfig {
        TrainConfig {
            feed: match kind {
                SystemKind::Base => ConstraintFeed::None,
                SystemKind::Leca => ConstraintFeed::Resample,
            },
            sampler: self.sampler.clone(),
            seed: crate::derive_seed(self.seed, &format!("train-{}-{index}", kind.as_str())),
            ..self.train.clone()
        }
    }

    /// Parameter initialisation seed of member `index` of `kind`.
    pub fn init_seed(&self, kind: SystemKind, index: usize) -> u64 {
        crate::derive_seed(self.seed, &format!("init-{}-{index}", kind.as_str()))
    }

    /// Train member `index` of `kind` on `data`.
    pub fn train_member(&self, data: &PreparedData, kind: SystemKind, index: usize) -> Result<TrainOutcome> {
        let mc = model_config_for(&data.vocab, &self.sampler, &self.model);
        let tc = self.train_config(kind, index);
        let seed = self.init_seed(kind, index);
        if self.two_phase.enabled {
            train_two_phase(&data.train, &data.vocab, &mc, &tc, seed, self.two_phase.noise_rate)
        } else {
            train_model(&data.train, &data.vocab, &mc, &tc, seed)
        }
    }
}

/// Scores of one decoded setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingResult {
    pub setting: Setting,
    pub label: String,
    pub report: EvalReport,
    pub completion_rate: f64,
    pub records: Vec<DecodedRecord>,
}

/// Decode, post-process and score one setting. `leca` holds the augmented
/// models; the single-model rows use its first member.
pub fn run_setting(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    setting: Setting,
    base: &Model,
    leca: &[Model],
) -> Result<SettingResult> {
    let models: &[Model] = match setting {
        Setting::Base | Setting::BaseLcd => std::slice::from_ref(base),
        Setting::Leca | Setting::LecaLcd => &leca[..1.min(leca.len())],
        Setting::LecaLcdEnsemble => leca,
    };
    if models.is_empty() {
        return Err(Error::config("no augmented models supplied"));
    }
    let system = System { models, input: setting.input(), space: cfg.ensemble_space };
    let dcfg = cfg.decode.for_setting(setting);
    let raw = decode_corpus(&system, &data.test, &data.vocab, &cfg.sampler, &dcfg)?;
    let completion_rate = completion_rate(&raw, &data.test, &data.vocab)?;
    let records = postprocess_records(&raw, &data.test)?;
    let report = evaluate_records(&records, &data.test)?;
    Ok(SettingResult { setting, label: setting.label(models.len()), report, completion_rate, records })
}

/// All five grid rows.
pub fn run_grid(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    base: &Model,
    leca: &[Model],
) -> Result<Vec<SettingResult>> {
    Setting::ALL.iter().map(|&s| run_setting(cfg, data, s, base, leca)).collect()
}

/// One point of the beam-size sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub system: SystemKind,
    pub mode: DecodeMode,
    pub beam: usize,
    pub bleu: f64,
    pub combined: f64,
    pub sent_pct: f64,
    pub completion_rate: f64,
}

/// Constrained decoding of both systems over `beams`.
pub fn sweep_beams(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    base: &Model,
    leca: &Model,
    beams: &[usize],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(2 * beams.len());
    for (kind, model) in [(SystemKind::Base, base), (SystemKind::Leca, leca)] {
        let system = System::single(model, kind.input());
        for &beam in beams {
            let dcfg = cfg.decode.config(cfg.decode.lcd_mode, beam);
            let raw = decode_corpus(&system, &data.test, &data.vocab, &cfg.sampler, &dcfg)?;
            let completion_rate = completion_rate(&raw, &data.test, &data.vocab)?;
            let records = postprocess_records(&raw, &data.test)?;
            let r = evaluate_records(&records, &data.test)?;
            rows.push(SweepRow {
                system: kind,
                mode: dcfg.mode,
                beam,
                bleu: r.bleu,
                combined: r.combined,
                sent_pct: r.sent_pct,
                completion_rate,
            });
        }
    }
    Ok(rows)
}

/// CSV rendering of a sweep, one line per row.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("system,mode,beam,bleu,combined,sent_pct,completion_rate\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.2},{:.2},{:.2},{:.2}\n",
            r.system.as_str(),
            r.mode,
            r.beam,
            r.bleu,
            r.combined,
            r.sent_pct,
            r.completion_rate
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_data() -> PreparedData {
        let cfg = DataConfig { train_size: 60, test_size: 20, ..Default::default() };
        prepare_data(&cfg, &SamplerConfig::default()).unwrap()
    }

    #[test]
    fn splits_are_disjoint_and_sized() {
        let d = small_data();
        assert_eq!((d.train.len(), d.test.len()), (60, 20));
        let train_ids: std::collections::HashSet<_> = d.train.iter().map(|p| &p.id).collect();
        assert!(d.test.iter().all(|p| !train_ids.contains(&p.id)));
        assert!(d
            .test
            .iter()
            .all(|p| (1..=4).contains(&p.constraints.len())
                || p.constraints.len() == crate::text::words(&p.target).len()));
    }

    #[test]
    fn preparation_is_deterministic() {
        let a = small_data();
        let b = small_data();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.vocab, b.vocab);
    }

    #[test]
    fn noisy_copies_drop_tokens_but_keep_targets() {
        let d = small_data();
        let noisy = synthesize_noisy(&d.train, 0.5, 3);
        for (n, p) in noisy.iter().zip(&d.train) {
            assert_eq!(n.target, p.target);
            assert!(!n.source.is_empty());
            assert!(n.source.split_whitespace().count() <= p.source.split_whitespace().count());
        }
    }

    #[test]
    fn constrained_decoding_with_an_untrained_model_meets_constraints() {
        let d = small_data();
        let sampler = SamplerConfig::default();
        let cfg = model_config_for(&d.vocab, &sampler, &ModelConfig { d_model: 8, ffn_dim: 16, ..Default::default() });
        let model = init_model(&cfg, 1).unwrap();
        let system = System::single(&model, InputKind::Augmented);
        let dcfg = DecodeConfig::new(DecodeMode::Dba, 4);
        let recs = decode_corpus(&system, &d.test, &d.vocab, &sampler, &dcfg).unwrap();
        let recs = postprocess_records(&recs, &d.test).unwrap();
        let report = evaluate_records(&recs, &d.test).unwrap();
        let finished: Vec<_> = recs.iter().zip(&d.test).filter(|(r, _)| r.finished).collect();
        for (r, p) in finished {
            assert!(crate::evaluation::is_compliant(&r.output, &p.constraints), "{} vs {:?}", r.output, p.constraints);
        }
        assert!(report.bleu >= 0.0);
    }

    fn tiny_experiment() -> (ExperimentConfig, PreparedData) {
        let mut cfg = ExperimentConfig::default();
        cfg.data.train_size = 40;
        cfg.data.test_size = 12;
        cfg.model.d_model = 8;
        cfg.model.ffn_dim = 16;
        cfg.train.steps = 3;
        cfg.train.warmup = 2;
        cfg.train.checkpoint_every = 1;
        cfg.ensemble_size = 2;
        let data = prepare_data(&cfg.data_config(), &cfg.sampler).unwrap();
        (cfg, data)
    }

    #[test]
    fn default_config_is_valid_and_round_trips_through_json() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"seed": 9, "decode": {"lcd_beam": 7}}"#).unwrap();
        assert_eq!((partial.seed, partial.decode.lcd_beam, partial.decode.beam_size), (9, 7, 5));
    }

    #[test]
    fn member_seeds_differ_by_kind_and_index() {
        let cfg = ExperimentConfig::default();
        let seeds = [
            cfg.init_seed(SystemKind::Base, 0),
            cfg.init_seed(SystemKind::Leca, 0),
            cfg.init_seed(SystemKind::Leca, 1),
        ];
        assert!(seeds[0] != seeds[1] && seeds[1] != seeds[2]);
        assert_eq!(cfg.train_config(SystemKind::Base, 0).feed, ConstraintFeed::None);
        assert_eq!(cfg.train_config(SystemKind::Leca, 3).feed, ConstraintFeed::Resample);
    }

    #[test]
    fn grid_has_five_rows_and_sweep_has_two_per_beam() {
        let (cfg, data) = tiny_experiment();
        let base = cfg.train_member(&data, SystemKind::Base, 0).unwrap().model;
        let leca: Vec<Model> = (0..2).map(|i| cfg.train_member(&data, SystemKind::Leca, i).unwrap().model).collect();
        let grid = run_grid(&cfg, &data, &base, &leca).unwrap();
        assert_eq!(grid.len(), 5);
        for row in grid.iter().filter(|r| r.setting.is_constrained()) {
            for (rec, pair) in row.records.iter().zip(&data.test).filter(|(r, _)| r.finished) {
                assert!(crate::evaluation::is_compliant(&rec.output, &pair.constraints));
            }
        }
        let rows = sweep_beams(&cfg, &data, &base, &leca[0], &[1, 2, 4, 8, 16]).unwrap();
        assert_eq!(rows.len(), 10);
        assert_eq!(sweep_csv(&rows).lines().count(), 11);
    }
}
