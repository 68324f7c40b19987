//! Binned covariates and the tree-growing machinery shared by the regression
//! and causal forests.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

/// Covariates discretized at quantile cut points. A value goes left at cut
/// `b` when `x <= thresholds[b]`, which is the same as `code <= b`.
#[derive(Debug, Clone)]
pub struct BinnedMatrix {
    pub n: usize,
    pub p: usize,
    /// Column-major bin codes.
    codes: Vec<u16>,
    pub thresholds: Vec<Vec<f64>>,
}

impl BinnedMatrix {
    /// Bins row-major `x` (`n x p`) into at most `max_bins` bins per column.
    pub fn new(x: &[f64], n: usize, p: usize, max_bins: usize) -> Self {
        let max_bins = max_bins.clamp(2, u16::MAX as usize);
        let mut thresholds = Vec::with_capacity(p);
        let mut codes = vec![0u16; n * p];
        for j in 0..p {
            let mut col: Vec<f64> = (0..n).map(|i| x[i * p + j]).collect();
            col.sort_by(f64::total_cmp);
            col.dedup();
            let cuts: Vec<f64> = if col.len() <= max_bins {
                col.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            } else {
                let mut c: Vec<f64> = (1..max_bins)
                    .map(|k| {
                        let pos = k * col.len() / max_bins;
                        0.5 * (col[pos - 1] + col[pos])
                    })
                    .collect();
                c.dedup();
                c
            };
            for i in 0..n {
                let v = x[i * p + j];
                codes[j * n + i] = cuts.partition_point(|t| *t < v) as u16;
            }
            thresholds.push(cuts);
        }
        BinnedMatrix {
            n,
            p,
            codes,
            thresholds,
        }
    }

    #[inline]
    pub fn code(&self, i: usize, j: usize) -> usize {
        self.codes[j * self.n + i] as usize
    }

    pub fn n_bins(&self, j: usize) -> usize {
        self.thresholds[j].len() + 1
    }
}

pub const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    /// Split feature, or [`LEAF`].
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    /// Bin code of the split; rows with `code <= bin` go left.
    pub bin: u32,
    pub depth: u16,
    /// Index into the tree's leaf statistics when this is a leaf.
    pub leaf: u32,
}

/// Leaf statistics of the estimation sample: count, Σw, Σy, Σwy, Σw².
/// Regression trees use only the first and third entries.
pub type LeafStats = [f64; 5];

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub leaves: Vec<LeafStats>,
}

impl Tree {
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut k = 0usize;
        loop {
            let node = &self.nodes[k];
            if node.feature == LEAF {
                return node.leaf as usize;
            }
            k = if row[node.feature as usize] <= node.threshold {
                node.left as usize
            } else {
                node.right as usize
            };
        }
    }

    /// Leaf reached by training row `i`, routed on bin codes.
    pub fn leaf_index_binned(&self, bins: &BinnedMatrix, i: usize) -> usize {
        let mut k = 0usize;
        loop {
            let node = &self.nodes[k];
            if node.feature == LEAF {
                return node.leaf as usize;
            }
            k = if bins.code(i, node.feature as usize) <= node.bin as usize {
                node.left as usize
            } else {
                node.right as usize
            };
        }
    }

    /// (feature, depth) of every split, depth counted from 1 at the root.
    pub fn splits(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes
            .iter()
            .filter(|n| n.feature != LEAF)
            .map(|n| (n.feature as usize, n.depth as usize + 1))
    }
}

/// Split-scoring rule. Each sample carries a score `g` and, for causal trees,
/// a treatment flag; a split maximizes `Σ_children (Σg)² / n`.
pub struct SplitRule {
    pub min_leaf: usize,
    /// Require `min_leaf` treated and `min_leaf` control units per child.
    pub by_arm: bool,
}

pub struct GrowInput<'a> {
    pub bins: &'a BinnedMatrix,
    pub mtry: usize,
    pub rule: SplitRule,
    /// Treatment flags (causal trees only).
    pub treat: Option<&'a [bool]>,
}

/// Recomputes per-sample split scores for the samples of one node.
pub trait NodeScores {
    fn scores(&self, samples: &[u32], out: &mut Vec<f64>);
}

struct Best {
    gain: f64,
    feature: usize,
    bin: usize,
}

fn arm_counts(samples: &[u32], treat: Option<&[bool]>) -> (usize, usize) {
    match treat {
        None => (samples.len(), 0),
        Some(t) => {
            let nt = samples.iter().filter(|&&i| t[i as usize]).count();
            (nt, samples.len() - nt)
        }
    }
}

fn find_split(
    input: &GrowInput,
    samples: &[u32],
    g: &[f64],
    features: &[usize],
    hist_n: &mut Vec<f64>,
    hist_g: &mut Vec<f64>,
    hist_t: &mut Vec<f64>,
) -> Option<Best> {
    let n = samples.len() as f64;
    let total: f64 = g.iter().sum();
    let parent = total * total / n;
    let (nt_all, _) = arm_counts(samples, input.treat);
    let min = input.rule.min_leaf as f64;
    let mut best: Option<Best> = None;
    for &j in features {
        let nb = input.bins.n_bins(j);
        if nb < 2 {
            continue;
        }
        hist_n.clear();
        hist_n.resize(nb, 0.0);
        hist_g.clear();
        hist_g.resize(nb, 0.0);
        hist_t.clear();
        hist_t.resize(nb, 0.0);
        for (k, &i) in samples.iter().enumerate() {
            let b = input.bins.code(i as usize, j);
            hist_n[b] += 1.0;
            hist_g[b] += g[k];
            if let Some(t) = input.treat {
                if t[i as usize] {
                    hist_t[b] += 1.0;
                }
            }
        }
        let (mut ln, mut lg, mut lt) = (0.0, 0.0, 0.0);
        for b in 0..nb - 1 {
            ln += hist_n[b];
            lg += hist_g[b];
            lt += hist_t[b];
            if hist_n[b] == 0.0 && b > 0 {
                // same partition as the previous cut
                continue;
            }
            let rn = n - ln;
            if ln < min || rn < min {
                continue;
            }
            if input.rule.by_arm {
                let rt = nt_all as f64 - lt;
                if lt < min || rt < min || (ln - lt) < min || (rn - rt) < min {
                    continue;
                }
            }
            let rg = total - lg;
            let gain = lg * lg / ln + rg * rg / rn - parent;
            if gain > best.as_ref().map_or(1e-12 * (1.0 + parent.abs()), |b| b.gain) {
                best = Some(Best {
                    gain,
                    feature: j,
                    bin: b,
                });
            }
        }
    }
    best
}

/// Grows a tree on `samples` (structure half for honest trees). Leaves are
/// returned as sample lists in leaf order; statistics are filled by the caller.
pub fn grow(
    input: &GrowInput,
    samples: Vec<u32>,
    scorer: &dyn NodeScores,
    rng: &mut ChaCha8Rng,
) -> (Vec<Node>, Vec<Vec<u32>>) {
    let mut nodes = vec![Node {
        feature: LEAF,
        threshold: 0.0,
        left: 0,
        right: 0,
        bin: 0,
        depth: 0,
        leaf: 0,
    }];
    let mut leaves: Vec<Vec<u32>> = Vec::new();
    let mut stack = vec![(0usize, samples)];
    let mut features: Vec<usize> = (0..input.bins.p).collect();
    let mut g = Vec::new();
    let (mut hn, mut hg, mut ht) = (Vec::new(), Vec::new(), Vec::new());
    while let Some((k, s)) = stack.pop() {
        let min = input.rule.min_leaf * if input.rule.by_arm { 4 } else { 2 };
        let mut split = None;
        if s.len() >= min {
            features.shuffle(rng);
            scorer.scores(&s, &mut g);
            split = find_split(
                input,
                &s,
                &g,
                &features[..input.mtry.min(features.len())],
                &mut hn,
                &mut hg,
                &mut ht,
            );
        }
        match split {
            None => {
                nodes[k].leaf = leaves.len() as u32;
                leaves.push(s);
            }
            Some(b) => {
                let (l, r): (Vec<u32>, Vec<u32>) = s
                    .into_iter()
                    .partition(|&i| input.bins.code(i as usize, b.feature) <= b.bin);
                let depth = nodes[k].depth + 1;
                let li = nodes.len();
                for _ in 0..2 {
                    nodes.push(Node {
                        feature: LEAF,
                        threshold: 0.0,
                        left: 0,
                        right: 0,
                        bin: 0,
                        depth,
                        leaf: 0,
                    });
                }
                let node = &mut nodes[k];
                node.feature = b.feature as u32;
                node.threshold = input.bins.thresholds[b.feature][b.bin];
                node.left = li as u32;
                node.right = li as u32 + 1;
                node.bin = b.bin as u32;
                stack.push((li + 1, r));
                stack.push((li, l));
            }
        }
    }
    (nodes, leaves)
}
