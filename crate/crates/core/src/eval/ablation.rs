//! Seeded benchmark runs: pretraining on a source domain, prompt fine-tuning
//! on a shifted target domain, and the strategy and insertion-location
//! ablations built on them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::matrix::{default_rows, evaluate_rows, EvalMatrix, RowSpec, Serve};
use crate::error::{Error, Result};
use crate::model::{FineTuneMode, Insertion, PuNet, RaterTag, UNetConfig};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::synth::{build_dataset, default_profiles, derive_seed, DomainShift, MultiRaterDataset, RaterProfile, SceneConfig};
use crate::train::{train, Schedule, TrainConfig, TrainingStrategy, DEFAULT_SMOOTH};

/// Everything that defines a seeded benchmark run except the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Benchmark {
    pub model: UNetConfig,
    pub profiles: Vec<RaterProfile>,
    pub noise_std: f64,
    /// Scenes of the source domain used for pretraining.
    pub source_scenes: usize,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub target: DomainShift,
    pub pretrain: Schedule,
    pub finetune: Schedule,
    pub batch_size: usize,
    pub smooth: f64,
}

impl Default for Benchmark {
    fn default() -> Self {
        Benchmark {
            model: UNetConfig::default(),
            profiles: default_profiles(),
            noise_std: SceneConfig::default().noise_std,
            source_scenes: 64,
            train_scenes: 64,
            test_scenes: 16,
            target: DomainShift {
                contrast: 0.8,
                shift: 0.1,
            },
            pretrain: Schedule::desk(),
            finetune: Schedule::desk(),
            batch_size: 4,
            smooth: DEFAULT_SMOOTH,
        }
    }
}

/// Datasets of one seed.
#[derive(Clone, Debug)]
pub struct SeedData<T> {
    pub source: MultiRaterDataset<T>,
    pub train: MultiRaterDataset<T>,
    pub test: MultiRaterDataset<T>,
}

impl Benchmark {
    pub fn scene_config(&self, domain: DomainShift) -> SceneConfig {
        let (height, width) = self.model.input_size;
        SceneConfig {
            height,
            width,
            noise_std: self.noise_std,
            domain,
        }
    }

    pub fn raters(&self) -> usize {
        self.profiles.len()
    }

    /// Source scenes from one seed stream, target train and test scenes from another.
    pub fn data<T: Scalar>(&self, seed: u64) -> Result<SeedData<T>> {
        let source = build_dataset(
            self.source_scenes,
            &self.profiles,
            derive_seed(seed, 0),
            &self.scene_config(DomainShift::IDENTITY),
        )?;
        let target = build_dataset(
            self.train_scenes + self.test_scenes,
            &self.profiles,
            derive_seed(seed, 1),
            &self.scene_config(self.target),
        )?;
        let (train, test) = target.split_at(self.train_scenes)?;
        Ok(SeedData { source, train, test })
    }

    pub fn net(&self, insertion: Insertion) -> Result<PuNet> {
        PuNet::new(
            UNetConfig {
                insertion,
                ..self.model.clone()
            },
            self.raters(),
        )
    }

    fn config(&self, mode: FineTuneMode, strategy: TrainingStrategy, schedule: &Schedule, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            smooth: self.smooth,
            ..TrainConfig::new(mode, strategy, schedule.clone(), seed)
        }
    }

    /// Full-mode training on majority-vote labels of the source domain.
    pub fn pretrain<T: Scalar>(&self, net: &PuNet, source: &MultiRaterDataset<T>, seed: u64) -> Result<ParamStore<T>> {
        let store = net.init_params(derive_seed(seed, 2))?;
        let cfg = self.config(FineTuneMode::Full, TrainingStrategy::FusionOnly, &self.pretrain, derive_seed(seed, 3));
        Ok(train(net, store, source, cfg)?.store)
    }

    /// Prompt-and-head fine-tuning on the target domain.
    pub fn finetune<T: Scalar>(
        &self,
        net: &PuNet,
        pretrained: &ParamStore<T>,
        train_set: &MultiRaterDataset<T>,
        strategy: TrainingStrategy,
        seed: u64,
    ) -> Result<ParamStore<T>> {
        let cfg = self.config(FineTuneMode::PromptAndHead, strategy, &self.finetune, derive_seed(seed, 4));
        Ok(train(net, pretrained.clone(), train_set, cfg)?.store)
    }
}

/// How a model trained with `strategy` answers each label source: its own
/// prompt where one was trained, otherwise the aggregate prompt or the vote of
/// the individual prompts.
pub fn strategy_serving(strategy: TrainingStrategy, raters: usize, params: Option<usize>) -> RowSpec {
    let individual: Vec<RaterTag> = (1..=raters).map(RaterTag::Rater).collect();
    let columns = match strategy {
        TrainingStrategy::FusionOnly => vec![Some(Serve::Tag(RaterTag::Aggregate)); raters + 1],
        TrainingStrategy::IndividualOnly => individual
            .iter()
            .map(|&t| Some(Serve::Tag(t)))
            .chain(std::iter::once(Some(Serve::Vote(individual.clone()))))
            .collect(),
        TrainingStrategy::Mix | TrainingStrategy::LabelSampling => RaterTag::report_order(raters)
            .map(|t| Some(Serve::Tag(t)))
            .collect(),
    };
    RowSpec {
        label: format!("{strategy} (served)"),
        columns,
        params,
    }
}

/// Mean over the `R + 1` matched cells of a served row.
pub fn matched_mean(m: &EvalMatrix, row: usize) -> f64 {
    let n = m.cols.len();
    (0..n).filter_map(|j| m.mean_dice(row, j)).sum::<f64>() / n as f64
}

/// `mean_j [D(P_rj, rater j) − mean_{k≠j} D(P_rj, rater k)]` over the first
/// `R` rows and columns of a prompted model's matrix.
pub fn specialization_gap(m: &EvalMatrix, raters: usize) -> Result<f64> {
    if raters < 2 || m.rows.len() < raters || m.cols.len() < raters {
        return Err(Error::Argument("specialization needs at least 2 prompt rows and rater columns".into()));
    }
    let cell = |i: usize, j: usize| {
        m.mean_dice(i, j)
            .ok_or_else(|| Error::Argument(format!("cell ({i}, {j}) is N/A")))
    };
    let mut total = 0.0;
    for j in 0..raters {
        let matched = cell(j, j)?;
        let mut other = 0.0;
        for k in (0..raters).filter(|&k| k != j) {
            other += cell(j, k)?;
        }
        total += matched - other / (raters - 1) as f64;
    }
    Ok(total / raters as f64)
}

/// One fine-tuned model of a seeded run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub insertion: Insertion,
    pub strategy: TrainingStrategy,
    /// Default prompt rows followed by the served row.
    pub matrix: EvalMatrix,
}

impl RunResult {
    pub fn served_row(&self) -> usize {
        self.matrix.rows.len() - 1
    }

    pub fn matched_mean(&self) -> f64 {
        matched_mean(&self.matrix, self.served_row())
    }

    /// Mean disc/cup Dice of the aggregate answer against the majority vote.
    pub fn mv_dice(&self) -> f64 {
        let row = self.served_row();
        self.matrix.mean_dice(row, self.matrix.cols.len() - 1).unwrap_or(0.0)
    }

    /// (disc, cup) Dice of the aggregate answer against the majority vote.
    pub fn mv_cell(&self) -> [f64; 2] {
        self.matrix.cells[self.served_row()][self.matrix.cols.len() - 1].unwrap_or([0.0, 0.0])
    }
}

/// Fine-tunes `pretrained` with `strategy` and evaluates it on the test split.
pub fn finetune_and_evaluate<T: Scalar>(
    bench: &Benchmark,
    net: &PuNet,
    pretrained: &ParamStore<T>,
    data: &SeedData<T>,
    strategy: TrainingStrategy,
    seed: u64,
) -> Result<RunResult> {
    let tuned = bench.finetune(net, pretrained, &data.train, strategy, seed)?;
    let label = format!("{} {strategy}", net.config().insertion);
    let mut rows = default_rows(net, &label, Some(tuned.count_trainable()));
    rows.push(strategy_serving(strategy, net.raters(), Some(tuned.count_trainable())));
    let matrix = evaluate_rows(net, &tuned, &data.test, &rows)?;
    Ok(RunResult {
        seed,
        insertion: net.config().insertion,
        strategy,
        matrix,
    })
}

pub const STRATEGIES: [TrainingStrategy; 3] =
    [TrainingStrategy::IndividualOnly, TrainingStrategy::FusionOnly, TrainingStrategy::Mix];
pub const LOCATIONS: [Insertion; 3] = [Insertion::DownOnly, Insertion::UpOnly, Insertion::Both];

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn seeds_of(runs: &[RunResult]) -> Vec<u64> {
    let mut s: Vec<u64> = runs.iter().map(|r| r.seed).collect();
    s.dedup();
    s
}

#[derive(Clone, Debug)]
pub struct StrategyReport {
    pub runs: Vec<RunResult>,
}

impl StrategyReport {
    pub fn seeds(&self) -> Vec<u64> {
        seeds_of(&self.runs)
    }

    fn values(&self, strategy: TrainingStrategy, f: fn(&RunResult) -> f64) -> Vec<f64> {
        self.runs.iter().filter(|r| r.strategy == strategy).map(f).collect()
    }

    /// Matched-cell mean Dice of `strategy` averaged over seeds.
    pub fn mean(&self, strategy: TrainingStrategy) -> f64 {
        mean_std(&self.values(strategy, RunResult::matched_mean)).0
    }

    pub fn mix_is_best(&self) -> bool {
        let mix = self.mean(TrainingStrategy::Mix);
        mix >= self.mean(TrainingStrategy::IndividualOnly) && mix >= self.mean(TrainingStrategy::FusionOnly)
    }

    pub fn summary(&self) -> String {
        let parts: Vec<String> = STRATEGIES.iter().map(|&st| format!("{st} {:.4}", self.mean(st))).collect();
        let verdict = if self.mix_is_best() {
            "mix is at least as good as both alternatives"
        } else {
            "DEVIATES: mix is not the best strategy"
        };
        format!("{}: {verdict}", parts.join(", "))
    }

    /// One row per strategy with the seed mean and standard deviation.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("strategy,matched_mean_dice,matched_std,mv_dice,mv_std,seeds\n");
        for st in STRATEGIES {
            let (m, sd) = mean_std(&self.values(st, RunResult::matched_mean));
            let (mv, mvsd) = mean_std(&self.values(st, RunResult::mv_dice));
            let n = self.values(st, RunResult::mv_dice).len();
            writeln!(s, "{st},{m:.6},{sd:.6},{mv:.6},{mvsd:.6},{n}").expect("string write");
        }
        s
    }

    /// One row per seed and strategy.
    pub fn runs_csv(&self) -> String {
        let mut s = String::from("strategy,seed,matched_mean_dice,mv_dice\n");
        for r in &self.runs {
            writeln!(s, "{},{},{:.6},{:.6}", r.strategy, r.seed, r.matched_mean(), r.mv_dice()).expect("string write");
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct LocationReport {
    pub runs: Vec<RunResult>,
}

impl LocationReport {
    pub fn seeds(&self) -> Vec<u64> {
        seeds_of(&self.runs)
    }

    fn values(&self, insertion: Insertion) -> Vec<f64> {
        self.runs.iter().filter(|r| r.insertion == insertion).map(RunResult::mv_dice).collect()
    }

    /// Majority-vote Dice of the aggregate prompt for `insertion`, averaged over seeds.
    pub fn mean(&self, insertion: Insertion) -> f64 {
        mean_std(&self.values(insertion)).0
    }

    /// Whether Both ≥ UpOnly ≥ DownOnly holds on the seed means.
    pub fn ordering_holds(&self) -> bool {
        let (d, u, b) = (self.mean(Insertion::DownOnly), self.mean(Insertion::UpOnly), self.mean(Insertion::Both));
        b >= u && u >= d
    }

    pub fn summary(&self) -> String {
        let mut order: Vec<(Insertion, f64)> = LOCATIONS.iter().map(|&l| (l, self.mean(l))).collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1));
        let chain: Vec<String> = order.iter().map(|(l, v)| format!("{l} ({v:.4})")).collect();
        let verdict = if self.ordering_holds() {
            "matches the reference ordering both > up > down"
        } else {
            "DEVIATES from the reference ordering both > up > down"
        };
        format!("{}: {verdict}", chain.join(" > "))
    }

    /// One row per insertion scheme with the seed mean and standard deviation.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("insertion,mv_disc,mv_cup,mv_dice,mv_std,seeds\n");
        for l in LOCATIONS {
            let runs: Vec<&RunResult> = self.runs.iter().filter(|r| r.insertion == l).collect();
            let n = runs.len().max(1) as f64;
            let disc = runs.iter().map(|r| r.mv_cell()[0]).sum::<f64>() / n;
            let cup = runs.iter().map(|r| r.mv_cell()[1]).sum::<f64>() / n;
            let (m, sd) = mean_std(&self.values(l));
            writeln!(s, "{l},{disc:.6},{cup:.6},{m:.6},{sd:.6},{}", runs.len()).expect("string write");
        }
        s
    }

    pub fn runs_csv(&self) -> String {
        let mut s = String::from("insertion,seed,mv_disc,mv_cup,mv_dice\n");
        for r in &self.runs {
            let mv = r.mv_cell();
            writeln!(s, "{},{},{:.6},{:.6},{:.6}", r.insertion, r.seed, mv[0], mv[1], r.mv_dice()).expect("string write");
        }
        s
    }
}

/// Every model the acceptance benchmark needs for one seed: the three
/// strategies on a Both model, and Mix on DownOnly and UpOnly models.
pub fn run_seed<T: Scalar>(bench: &Benchmark, seed: u64, locations: bool, strategies: bool) -> Result<Vec<RunResult>> {
    let data = bench.data::<T>(seed)?;
    let mut out = Vec::new();
    for insertion in LOCATIONS {
        let wanted: Vec<TrainingStrategy> = match (insertion, strategies, locations) {
            (Insertion::Both, true, _) => STRATEGIES.to_vec(),
            (_, _, true) => vec![TrainingStrategy::Mix],
            _ => Vec::new(),
        };
        if wanted.is_empty() {
            continue;
        }
        let net = bench.net(insertion)?;
        let pretrained = bench.pretrain(&net, &data.source, seed)?;
        for strategy in wanted {
            out.push(finetune_and_evaluate(bench, &net, &pretrained, &data, strategy, seed)?);
        }
    }
    Ok(out)
}

pub fn run_ablation_strategy<T: Scalar>(bench: &Benchmark, seeds: &[u64]) -> Result<StrategyReport> {
    if seeds.is_empty() {
        return Err(Error::Config("an ablation needs at least one seed".into()));
    }
    let mut runs = Vec::new();
    for &s in seeds {
        runs.extend(run_seed::<T>(bench, s, false, true)?);
    }
    Ok(StrategyReport { runs })
}

pub fn run_ablation_locations<T: Scalar>(bench: &Benchmark, seeds: &[u64]) -> Result<LocationReport> {
    if seeds.is_empty() {
        return Err(Error::Config("an ablation needs at least one seed".into()));
    }
    let mut runs = Vec::new();
    for &s in seeds {
        runs.extend(run_seed::<T>(bench, s, true, false)?);
    }
    Ok(LocationReport { runs })
}
