//! Homogeneous batch planning for two-branch training.
//!
//! Branch A feeds the cue-augmented input (audio plus spatial feature),
//! branch B plain acoustic features. Each batch is drawn entirely from one
//! branch; `alpha` is the target proportion of A batches.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Proportion of A batches used when none is given.
pub const DEFAULT_ALPHA: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    /// Extra-feature branch.
    A,
    /// Plain acoustic branch.
    B,
}

impl Branch {
    pub fn label(self) -> &'static str {
        match self {
            Branch::A => "A",
            Branch::B => "B",
        }
    }

    fn as_char(self) -> char {
        match self {
            Branch::A => 'A',
            Branch::B => 'B',
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(Branch::A),
            "B" => Ok(Branch::B),
            _ => Err(Error::Format(format!("unknown branch {s:?}"))),
        }
    }
}

/// Which branches an item may be used in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Eligibility {
    AExtra,
    BPlain,
    Both,
}

impl Eligibility {
    pub fn allows(self, branch: Branch) -> bool {
        matches!(
            (self, branch),
            (Eligibility::Both, _) | (Eligibility::AExtra, Branch::A) | (Eligibility::BPlain, Branch::B)
        )
    }

    pub fn label(self) -> &'static str {
        match self {
            Eligibility::AExtra => "A",
            Eligibility::BPlain => "B",
            Eligibility::Both => "AB",
        }
    }
}

impl FromStr for Eligibility {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(Eligibility::AExtra),
            "B" => Ok(Eligibility::BPlain),
            "AB" => Ok(Eligibility::Both),
            _ => Err(Error::Format(format!("unknown eligibility {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub id: String,
    pub eligibility: Eligibility,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    items: Vec<DatasetItem>,
}

impl DatasetMeta {
    pub fn new(items: Vec<DatasetItem>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidInput("dataset has no items".into()));
        }
        let mut seen = BTreeSet::new();
        for it in &items {
            if !(it.duration_s > 0.0 && it.duration_s.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "item {} has non-positive duration {}",
                    it.id, it.duration_s
                )));
            }
            if it.id.is_empty() || it.id.contains(['\t', '\n']) {
                return Err(Error::InvalidInput(format!("invalid item id {:?}", it.id)));
            }
            if !seen.insert(it.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate item id {}", it.id)));
            }
        }
        Ok(DatasetMeta { items })
    }

    pub fn items(&self) -> &[DatasetItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Indices of items usable in `branch`.
    pub fn eligible(&self, branch: Branch) -> Vec<usize> {
        (0..self.items.len())
            .filter(|&i| self.items[i].eligibility.allows(branch))
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&DatasetItem> {
        self.items.iter().find(|it| it.id == id)
    }

    /// Parses `id<TAB>A|B|AB<TAB>duration` lines; blank lines and `#`
    /// comments are skipped.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut items = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, elig, dur] = fields[..] else {
                return Err(Error::Format(format!(
                    "line {}: expected 3 tab-separated fields",
                    n + 1
                )));
            };
            let duration_s = dur
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad duration {dur:?}", n + 1)))?;
            items.push(DatasetItem {
                id: id.to_string(),
                eligibility: elig.parse()?,
                duration_s,
            });
        }
        DatasetMeta::new(items)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for it in &self.items {
            writeln!(w, "{}\t{}\t{}", it.id, it.eligibility.label(), it.duration_s)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingMode {
    /// Each batch independently A with probability α.
    #[default]
    Bernoulli,
    /// Exactly `round(α · n)` A batches in shuffled order.
    Quota,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOptions {
    pub alpha: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Defaults to `ceil(items / batch_size)`.
    pub num_batches: Option<usize>,
    pub mode: SamplingMode,
}

impl PlanOptions {
    pub fn new(alpha: f64, batch_size: usize, seed: u64) -> Self {
        PlanOptions {
            alpha,
            batch_size,
            seed,
            num_batches: None,
            mode: SamplingMode::Bernoulli,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub branch: Branch,
    pub items: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub batches: Vec<Batch>,
    pub alpha: f64,
    pub seed: u64,
}

/// Items drawn without replacement, reshuffled once exhausted.
struct Pool {
    order: Vec<usize>,
    next: usize,
}

impl Pool {
    fn draw(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.next == self.order.len() {
                self.order.shuffle(rng);
                self.next = 0;
            }
            let cand = self.order[self.next];
            self.next += 1;
            // A reshuffle may bring back an item already in this batch.
            if !out.contains(&cand) {
                out.push(cand);
            }
        }
        out
    }
}

/// Plans one epoch of homogeneous batches.
///
/// Items are drawn without replacement within a branch until that branch's
/// pool runs out, after which the pool is reshuffled and reused. Items
/// eligible for both branches have a pool slot in each.
pub fn plan_epoch(meta: &DatasetMeta, opts: &PlanOptions) -> Result<BatchPlan> {
    if !(0.0..=1.0).contains(&opts.alpha) {
        return Err(Error::InvalidInput(format!("alpha {} outside [0, 1]", opts.alpha)));
    }
    if opts.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be at least 1".into()));
    }
    let n = opts.num_batches.unwrap_or_else(|| meta.len().div_ceil(opts.batch_size));
    for (branch, share) in [(Branch::A, opts.alpha), (Branch::B, 1.0 - opts.alpha)] {
        let available = meta.eligible(branch).len();
        if share > 0.0 && available < opts.batch_size {
            return Err(Error::InsufficientItems {
                branch: branch.as_char(),
                available,
                batch_size: opts.batch_size,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let branches: Vec<Branch> = match opts.mode {
        SamplingMode::Bernoulli => (0..n)
            .map(|_| {
                if rng.random_bool(opts.alpha) {
                    Branch::A
                } else {
                    Branch::B
                }
            })
            .collect(),
        SamplingMode::Quota => {
            let n_a = (opts.alpha * n as f64).round() as usize;
            let mut v: Vec<Branch> = (0..n).map(|i| if i < n_a { Branch::A } else { Branch::B }).collect();
            v.shuffle(&mut rng);
            v
        }
    };

    let mut pools: HashMap<Branch, Pool> = HashMap::new();
    for branch in [Branch::A, Branch::B] {
        let mut order = meta.eligible(branch);
        order.shuffle(&mut rng);
        pools.insert(branch, Pool { order, next: 0 });
    }
    let batches = branches
        .into_iter()
        .map(|branch| {
            let pool = pools.get_mut(&branch).expect("pool per branch");
            let items = pool
                .draw(opts.batch_size, &mut rng)
                .into_iter()
                .map(|i| meta.items[i].id.clone())
                .collect();
            Batch { branch, items }
        })
        .collect();
    Ok(BatchPlan {
        batches,
        alpha: opts.alpha,
        seed: opts.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchStats {
    pub proportion_a: f64,
    pub batch_count: usize,
    /// Number of distinct items appearing in the plan.
    pub item_coverage: usize,
}

pub fn branch_stats(plan: &BatchPlan) -> Result<BranchStats> {
    if plan.batches.is_empty() {
        return Err(Error::InvalidInput("plan has no batches".into()));
    }
    let n_a = plan.batches.iter().filter(|b| b.branch == Branch::A).count();
    let distinct: BTreeSet<&str> = plan
        .batches
        .iter()
        .flat_map(|b| b.items.iter().map(String::as_str))
        .collect();
    Ok(BranchStats {
        proportion_a: n_a as f64 / plan.batches.len() as f64,
        batch_count: plan.batches.len(),
        item_coverage: distinct.len(),
    })
}

/// Number of batches containing an item not eligible for the batch's branch
/// or unknown to `meta`.
pub fn homogeneity_violations(plan: &BatchPlan, meta: &DatasetMeta) -> usize {
    let lookup: HashMap<&str, Eligibility> = meta.items.iter().map(|it| (it.id.as_str(), it.eligibility)).collect();
    plan.batches
        .iter()
        .filter(|b| {
            b.items
                .iter()
                .any(|id| !lookup.get(id.as_str()).is_some_and(|e| e.allows(b.branch)))
        })
        .count()
}

impl BatchPlan {
    /// Writes a `# alpha=… seed=…` header then one `batch<TAB>branch<TAB>id`
    /// line per item.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# alpha={} seed={}", self.alpha, self.seed)?;
        for (i, b) in self.batches.iter().enumerate() {
            for id in &b.items {
                writeln!(w, "{i}\t{}\t{id}", b.branch)?;
            }
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty plan file".into()))??;
        let mut alpha = None;
        let mut seed = None;
        for tok in header
            .strip_prefix('#')
            .ok_or_else(|| Error::Format("missing plan header".into()))?
            .split_whitespace()
        {
            if let Some(v) = tok.strip_prefix("alpha=") {
                alpha = v.parse().ok();
            } else if let Some(v) = tok.strip_prefix("seed=") {
                seed = v.parse().ok();
            }
        }
        let (Some(alpha), Some(seed)) = (alpha, seed) else {
            return Err(Error::Format(format!("bad plan header {header:?}")));
        };
        let mut batches: Vec<Batch> = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [idx, branch, id] = fields[..] else {
                return Err(Error::Format(format!("line {}: expected 3 fields", n + 2)));
            };
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad batch index", n + 2)))?;
            let branch: Branch = branch.parse()?;
            if idx == batches.len() {
                batches.push(Batch {
                    branch,
                    items: Vec::new(),
                });
            } else if idx + 1 != batches.len() {
                return Err(Error::Format(format!("line {}: batch indices out of order", n + 2)));
            }
            let b = batches.last_mut().expect("batch exists");
            if b.branch != branch {
                return Err(Error::Format(format!("line {}: batch {idx} mixes branches", n + 2)));
            }
            b.items.push(id.to_string());
        }
        Ok(BatchPlan { batches, alpha, seed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta(n_a: usize, n_b: usize, n_both: usize) -> DatasetMeta {
        let mut items = Vec::new();
        for (prefix, count, e) in [
            ("a", n_a, Eligibility::AExtra),
            ("b", n_b, Eligibility::BPlain),
            ("x", n_both, Eligibility::Both),
        ] {
            for i in 0..count {
                items.push(DatasetItem {
                    id: format!("{prefix}{i}"),
                    eligibility: e,
                    duration_s: 1.0 + i as f64 * 0.1,
                });
            }
        }
        DatasetMeta::new(items).unwrap()
    }

    #[test]
    fn extreme_alphas() {
        let m = meta(10, 10, 10);
        for (alpha, branch) in [(1.0, Branch::A), (0.0, Branch::B)] {
            let plan = plan_epoch(&m, &PlanOptions::new(alpha, 4, 3)).unwrap();
            assert!(plan.batches.iter().all(|b| b.branch == branch));
        }
    }

    #[test]
    fn zero_alpha_tolerates_missing_a_items() {
        let m = meta(0, 8, 0);
        assert!(plan_epoch(&m, &PlanOptions::new(0.0, 4, 1)).is_ok());
        assert!(matches!(
            plan_epoch(&m, &PlanOptions::new(0.5, 4, 1)),
            Err(Error::InsufficientItems {
                branch: 'A',
                available: 0,
                batch_size: 4
            })
        ));
    }

    #[test]
    fn proportion_concentrates_near_alpha() {
        let m = meta(50, 50, 20);
        let mut opts = PlanOptions::new(0.7, 8, 42);
        opts.num_batches = Some(10_000);
        let stats = branch_stats(&plan_epoch(&m, &opts).unwrap()).unwrap();
        assert_eq!(stats.batch_count, 10_000);
        // 3σ of Binomial(10⁴, 0.7) / 10⁴ is 0.0137.
        assert!((stats.proportion_a - 0.7).abs() < 0.0137, "{stats:?}");
    }

    #[test]
    fn quota_mode_is_exact() {
        let m = meta(20, 20, 0);
        let mut opts = PlanOptions::new(0.7, 2, 5);
        opts.num_batches = Some(100);
        opts.mode = SamplingMode::Quota;
        let stats = branch_stats(&plan_epoch(&m, &opts).unwrap()).unwrap();
        assert_eq!(stats.proportion_a, 0.7);
    }

    #[test]
    fn stats_of_hand_built_plan() {
        let batch = |branch| Batch {
            branch,
            items: vec!["x".into()],
        };
        let mut batches: Vec<Batch> = (0..4).map(|_| batch(Branch::A)).collect();
        batches.extend((0..6).map(|_| batch(Branch::B)));
        let plan = BatchPlan {
            batches,
            alpha: 0.4,
            seed: 0,
        };
        let s = branch_stats(&plan).unwrap();
        assert_eq!(s.proportion_a, 0.4);
        assert_eq!(s.batch_count, 10);
        assert_eq!(s.item_coverage, 1);
        let empty = BatchPlan {
            batches: vec![],
            alpha: 0.4,
            seed: 0,
        };
        assert!(branch_stats(&empty).is_err());
    }

    #[test]
    fn items_without_replacement_until_exhausted() {
        let m = meta(12, 0, 0);
        let mut opts = PlanOptions::new(1.0, 4, 9);
        opts.num_batches = Some(3);
        let plan = plan_epoch(&m, &opts).unwrap();
        let ids: BTreeSet<_> = plan.batches.iter().flat_map(|b| b.items.clone()).collect();
        assert_eq!(ids.len(), 12);
    }

    #[test]
    fn invalid_options_rejected() {
        let m = meta(4, 4, 0);
        assert!(plan_epoch(&m, &PlanOptions::new(1.5, 2, 0)).is_err());
        assert!(plan_epoch(&m, &PlanOptions::new(f64::NAN, 2, 0)).is_err());
        assert!(plan_epoch(&m, &PlanOptions::new(0.5, 0, 0)).is_err());
    }

    #[test]
    fn meta_validation() {
        let item = |id: &str, d| DatasetItem {
            id: id.into(),
            eligibility: Eligibility::Both,
            duration_s: d,
        };
        assert!(DatasetMeta::new(vec![]).is_err());
        assert!(DatasetMeta::new(vec![item("a", 0.0)]).is_err());
        assert!(DatasetMeta::new(vec![item("a", 1.0), item("a", 2.0)]).is_err());
    }

    #[test]
    fn text_round_trips() {
        let m = meta(3, 2, 2);
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("a0\tA\t1\n"));
        assert_eq!(DatasetMeta::read(&buf[..]).unwrap(), m);

        let plan = plan_epoch(&m, &PlanOptions::new(0.5, 2, 1)).unwrap();
        let mut out = Vec::new();
        plan.write(&mut out).unwrap();
        assert_eq!(BatchPlan::read(&out[..]).unwrap(), plan);
    }

    #[test]
    fn malformed_text_rejected() {
        assert!(DatasetMeta::read("a\tC\t1\n".as_bytes()).is_err());
        assert!(DatasetMeta::read("a\tA\n".as_bytes()).is_err());
        assert!(BatchPlan::read("0\tA\ta\n".as_bytes()).is_err());
        assert!(BatchPlan::read("# alpha=0.5 seed=1\n0\tA\ta\n0\tB\tb\n".as_bytes()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn plans_are_homogeneous_and_deterministic(
            n_a in 2usize..20, n_b in 2usize..20, n_both in 0usize..10,
            alpha in 0.0f64..=1.0, bs in 1usize..3, seed in any::<u64>(), quota in any::<bool>(),
        ) {
            let m = meta(n_a, n_b, n_both);
            let mut opts = PlanOptions::new(alpha, bs, seed);
            opts.num_batches = Some(50);
            if quota { opts.mode = SamplingMode::Quota; }
            let plan = plan_epoch(&m, &opts).unwrap();
            prop_assert_eq!(homogeneity_violations(&plan, &m), 0);
            prop_assert!(plan.batches.iter().all(|b| b.items.len() == bs));
            let distinct = plan.batches.iter().all(|b| b.items.iter().collect::<BTreeSet<_>>().len() == b.items.len());
            prop_assert!(distinct);
            prop_assert_eq!(plan_epoch(&m, &opts).unwrap(), plan);
        }
    }
}
