//! MCTS-BH: K sequential tree searches, each committing one cell.
//!
//! Stage `s` searches from a root whose prefix holds the `s` cells committed so
//! far. A node's prefix is the root prefix plus the actions on its path; it is
//! terminal once the prefix holds K cells. Each iteration descends by UCT,
//! expands the first non-expanded node it meets, completes the prefix with
//! uniformly random unselected cells, scores that pattern and backs the score
//! up the path. With pruning on, expansion only offers the `prune_width` cells
//! with the highest selection value `d_i / d_max + sum_j D_ij / D_max`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CellGrid, CellId};
use crate::pattern::IlluminationPattern;
use crate::scoring::{ScoreContext, Scorer, ScorerKind};

/// How each stage picks the cell to commit from the root's children.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommitRule {
    #[default]
    MeanScore,
    MostVisits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MctsConfig {
    /// Iterations per stage.
    pub iterations: usize,
    pub exploration: f64,
    pub pruning: bool,
    /// Actions kept per expansion when pruning; `None` means the beam count.
    pub prune_width: Option<usize>,
    pub seed: u64,
    pub commit: CommitRule,
    pub scorer: ScorerKind,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            exploration: std::f64::consts::SQRT_2,
            pruning: true,
            prune_width: None,
            seed: 0,
            commit: CommitRule::MeanScore,
            scorer: ScorerKind::Sliding,
        }
    }
}

impl MctsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("mcts iterations must be at least 1".into()));
        }
        if self.prune_width == Some(0) {
            return Err(Error::Config("prune_width must be at least 1".into()));
        }
        if !(self.exploration.is_finite() && self.exploration >= 0.0) {
            return Err(Error::Config(
                "exploration constant must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub struct SearchNode {
    /// Cell added by the edge into this node; `None` for the root.
    pub action: Option<CellId>,
    pub parent: Option<NodeId>,
    /// Children in ascending action order.
    pub children: Vec<NodeId>,
    pub expanded: bool,
    pub visits: u64,
    pub score_sum: f64,
    /// Distance sum from every cell to this node's prefix (pruning only).
    dist_sum: Option<Vec<f64>>,
}

impl SearchNode {
    fn new(action: Option<CellId>, parent: Option<NodeId>) -> Self {
        Self {
            action,
            parent,
            children: Vec::new(),
            expanded: false,
            visits: 0,
            score_sum: 0.0,
            dist_sum: None,
        }
    }

    pub fn mean(&self) -> Option<f64> {
        (self.visits > 0).then(|| self.score_sum / self.visits as f64)
    }
}

/// Arena-backed search tree for one stage.
#[derive(Debug, Clone)]
pub struct SearchTree {
    root_prefix: Vec<CellId>,
    nodes: Vec<SearchNode>,
}

impl SearchTree {
    pub const ROOT: NodeId = 0;

    pub fn new(root_prefix: Vec<CellId>) -> Self {
        Self {
            root_prefix,
            nodes: vec![SearchNode::new(None, None)],
        }
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> &SearchNode {
        &self.nodes[Self::ROOT]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Root prefix followed by the actions from the root down to `id`.
    pub fn selected_prefix(&self, id: NodeId) -> Vec<CellId> {
        let mut path = Vec::new();
        let mut cur = Some(id);
        while let Some(n) = cur {
            if let Some(a) = self.nodes[n].action {
                path.push(a);
            }
            cur = self.nodes[n].parent;
        }
        path.reverse();
        let mut out = self.root_prefix.clone();
        out.extend(path);
        out
    }

    /// Adds children for `actions`, keeping children sorted by action.
    pub fn expand(&mut self, id: NodeId, actions: &[CellId]) {
        let mut sorted = actions.to_vec();
        sorted.sort_unstable();
        for a in sorted {
            let child = self.nodes.len();
            self.nodes.push(SearchNode::new(Some(a), Some(id)));
            self.nodes[id].children.push(child);
        }
        self.nodes[id].expanded = true;
    }

    /// UCT child choice. Unvisited children come first, lowest action first;
    /// otherwise the highest `mean + c sqrt(ln N_parent / N_child)`, ties to
    /// the lower action.
    pub fn uct_select(&self, id: NodeId, c: f64) -> Result<NodeId> {
        let node = &self.nodes[id];
        if node.children.is_empty() {
            return Err(Error::NoChildren);
        }
        if let Some(&unvisited) = node.children.iter().find(|&&ch| self.nodes[ch].visits == 0) {
            return Ok(unvisited);
        }
        let ln_parent = (node.visits.max(1) as f64).ln();
        let mut best = node.children[0];
        let mut best_value = f64::NEG_INFINITY;
        for &ch in &node.children {
            let child = &self.nodes[ch];
            let n = child.visits as f64;
            let value = child.score_sum / n + c * (ln_parent / n).sqrt();
            if value > best_value {
                best_value = value;
                best = ch;
            }
        }
        Ok(best)
    }

    /// Adds `score` and one visit to every node on `path`.
    pub fn backup(&mut self, path: &[NodeId], score: f64) {
        for &id in path {
            let node = &mut self.nodes[id];
            node.visits += 1;
            node.score_sum += score;
        }
    }

    /// The root child to commit under `rule`, or `None` if none was visited.
    pub fn best_root_action(&self, rule: CommitRule) -> Option<CellId> {
        let mut best: Option<(NodeId, f64)> = None;
        for &ch in &self.root().children {
            let child = &self.nodes[ch];
            let key = match rule {
                CommitRule::MeanScore => match child.mean() {
                    Some(m) => m,
                    None => continue,
                },
                CommitRule::MostVisits => {
                    if child.visits == 0 {
                        continue;
                    }
                    child.visits as f64
                }
            };
            if best.is_none_or(|(_, b)| key > b) {
                best = Some((ch, key));
            }
        }
        best.and_then(|(ch, _)| self.nodes[ch].action)
    }
}

/// Normalisers for the selection value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionNormalizers {
    pub d_max: f64,
    pub dist_max: f64,
}

impl SelectionNormalizers {
    /// `d_max` is the largest queue; `dist_max` is the grid diameter times the
    /// number of selected cells.
    pub fn new(queue_packets: &[f64], grid: &CellGrid, selected: usize) -> Self {
        Self {
            d_max: queue_packets.iter().copied().fold(0.0, f64::max),
            dist_max: grid.diameter() * selected as f64,
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Selection value of an unselected cell.
pub fn selection_value(
    cell: CellId,
    selected: &[CellId],
    queue_packets: &[f64],
    grid: &CellGrid,
    norm: &SelectionNormalizers,
) -> Result<f64> {
    grid.cell(cell)?;
    if selected.contains(&cell) {
        return Err(Error::AlreadySelected(cell));
    }
    let mut dist = 0.0;
    for &j in selected {
        dist += grid.distance(cell, j)?;
    }
    Ok(ratio(queue_packets[cell], norm.d_max) + ratio(dist, norm.dist_max))
}

/// The `prune_width` unselected cells with the largest selection value, in
/// descending value order (ties to the lower id). Without pruning, every
/// unselected cell in id order.
pub fn pruned_actions(
    selected: &[CellId],
    queue_packets: &[f64],
    grid: &CellGrid,
    prune_width: Option<usize>,
) -> Vec<CellId> {
    let n = grid.len();
    let mut taken = vec![false; n];
    for &c in selected {
        taken[c] = true;
    }
    let Some(width) = prune_width else {
        return (0..n).filter(|&c| !taken[c]).collect();
    };
    let norm = SelectionNormalizers::new(queue_packets, grid, selected.len());
    let mut dist = vec![0.0; n];
    for &j in selected {
        for (i, d) in grid.distance_row(j).iter().enumerate() {
            dist[i] += d;
        }
    }
    top_by_value(&taken, queue_packets, &dist, &norm, width)
}

fn top_by_value(
    taken: &[bool],
    queue: &[f64],
    dist: &[f64],
    norm: &SelectionNormalizers,
    width: usize,
) -> Vec<CellId> {
    let mut scored: Vec<(f64, CellId)> = (0..taken.len())
        .filter(|&c| !taken[c])
        .map(|c| {
            (
                ratio(queue[c], norm.d_max) + ratio(dist[c], norm.dist_max),
                c,
            )
        })
        .collect();
    let cmp = |a: &(f64, CellId), b: &(f64, CellId)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if width < scored.len() {
        scored.select_nth_unstable_by(width, cmp);
        scored.truncate(width);
    }
    scored.sort_unstable_by(cmp);
    scored.into_iter().map(|(_, c)| c).collect()
}

/// Completes `prefix` to `beams` cells uniformly at random and scores the
/// result. `taken` marks the prefix and is restored before returning.
fn rollout(
    prefix: &[CellId],
    taken: &mut [bool],
    pool: &mut Vec<CellId>,
    pattern: &mut Vec<CellId>,
    scorer: &mut Scorer,
    ctx: &ScoreContext<'_>,
    rng: &mut ChaCha8Rng,
) -> f64 {
    pattern.clear();
    pattern.extend_from_slice(prefix);
    let need = ctx.beams - prefix.len();
    if need > 0 {
        for &c in prefix {
            taken[c] = true;
        }
        pool.clear();
        pool.extend((0..taken.len()).filter(|&c| !taken[c]));
        for &c in prefix {
            taken[c] = false;
        }
        for i in 0..need {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
            pattern.push(pool[i]);
        }
    }
    pattern.sort_unstable();
    scorer.score_cells(ctx, pattern)
}

/// Random completion of a node's prefix, scored.
pub fn simulate(
    tree: &SearchTree,
    node: NodeId,
    ctx: &ScoreContext<'_>,
    scorer: ScorerKind,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let prefix = tree.selected_prefix(node);
    let n = ctx.grid.len();
    let mut taken = vec![false; n];
    let mut scorer = Scorer::new(scorer, n);
    rollout(
        &prefix,
        &mut taken,
        &mut Vec::new(),
        &mut Vec::new(),
        &mut scorer,
        ctx,
        rng,
    )
}

/// Best simulated score seen so far, per stage and iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MctsTrace {
    pub stage_best: Vec<Vec<f64>>,
}

impl MctsTrace {
    /// Mean over stages of the best-so-far score at each iteration index.
    pub fn aggregate(&self) -> Vec<f64> {
        let len = self.stage_best.iter().map(Vec::len).max().unwrap_or(0);
        (0..len)
            .map(|i| {
                let vals: Vec<f64> = self
                    .stage_best
                    .iter()
                    .map(|s| s.get(i).or(s.last()).copied().unwrap_or(0.0))
                    .collect();
                vals.iter().sum::<f64>() / vals.len() as f64
            })
            .collect()
    }

    /// First iteration (1-based) at which the aggregate reaches `fraction` of
    /// its final value.
    pub fn iterations_to_reach(&self, fraction: f64) -> Option<usize> {
        let agg = self.aggregate();
        let target = fraction * agg.last().copied()?;
        agg.iter().position(|&v| v >= target).map(|i| i + 1)
    }
}

/// Runs MCTS-BH on the queue snapshot in `ctx`.
pub fn compute_pattern_mcts(
    ctx: &ScoreContext<'_>,
    cfg: &MctsConfig,
) -> Result<IlluminationPattern> {
    compute_pattern_mcts_traced(ctx, cfg).map(|(p, _)| p)
}

pub fn compute_pattern_mcts_traced(
    ctx: &ScoreContext<'_>,
    cfg: &MctsConfig,
) -> Result<(IlluminationPattern, MctsTrace)> {
    cfg.validate()?;
    let n = ctx.grid.len();
    let k = ctx.beams;
    if k > n {
        return Err(Error::TooManyBeams { beams: k, cells: n });
    }
    let mut search = StageSearch::new(ctx, cfg);
    let mut committed: Vec<CellId> = Vec::with_capacity(k);
    let mut trace = MctsTrace::default();
    for stage in 0..k {
        if n - committed.len() == k - committed.len() {
            // every remaining cell is forced
            let mut taken = vec![false; n];
            committed.iter().for_each(|&c| taken[c] = true);
            committed.extend((0..n).filter(|&c| !taken[c]));
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stage as u64);
        let (tree, best) = search.run(&committed, &mut rng);
        trace.stage_best.push(best);
        let cell = tree
            .best_root_action(cfg.commit)
            .ok_or_else(|| Error::Invariant("stage finished with no visited root child".into()))?;
        committed.push(cell);
    }
    committed.sort_unstable();
    Ok((IlluminationPattern::from_sorted_unchecked(committed), trace))
}

/// Scratch state reused across stages of one pattern computation.
struct StageSearch<'c, 'a> {
    ctx: &'c ScoreContext<'a>,
    cfg: &'c MctsConfig,
    prune_width: Option<usize>,
    scorer: Scorer,
    taken: Vec<bool>,
    pool: Vec<CellId>,
    pattern: Vec<CellId>,
    prefix: Vec<CellId>,
    path: Vec<NodeId>,
    d_max: f64,
}

impl<'c, 'a> StageSearch<'c, 'a> {
    fn new(ctx: &'c ScoreContext<'a>, cfg: &'c MctsConfig) -> Self {
        let n = ctx.grid.len();
        Self {
            ctx,
            cfg,
            prune_width: cfg.pruning.then(|| cfg.prune_width.unwrap_or(ctx.beams)),
            scorer: Scorer::new(cfg.scorer, n),
            taken: vec![false; n],
            pool: Vec::with_capacity(n),
            pattern: Vec::with_capacity(ctx.beams),
            prefix: Vec::with_capacity(ctx.beams),
            path: Vec::with_capacity(ctx.beams + 1),
            d_max: ctx.queue_packets.iter().copied().fold(0.0, f64::max),
        }
    }

    fn run(&mut self, committed: &[CellId], rng: &mut ChaCha8Rng) -> (SearchTree, Vec<f64>) {
        let mut tree = SearchTree::new(committed.to_vec());
        let mut best_trace = Vec::with_capacity(self.cfg.iterations);
        let mut best = f64::NEG_INFINITY;
        for _ in 0..self.cfg.iterations {
            let score = self.iterate(&mut tree, committed, rng);
            best = best.max(score);
            best_trace.push(best);
        }
        (tree, best_trace)
    }

    fn iterate(
        &mut self,
        tree: &mut SearchTree,
        committed: &[CellId],
        rng: &mut ChaCha8Rng,
    ) -> f64 {
        let k = self.ctx.beams;
        self.prefix.clear();
        self.prefix.extend_from_slice(committed);
        self.path.clear();
        self.path.push(SearchTree::ROOT);
        let mut node = SearchTree::ROOT;
        while self.prefix.len() < k {
            if !tree.nodes[node].expanded {
                self.expand(tree, node);
            }
            let child = match tree.uct_select(node, self.cfg.exploration) {
                Ok(c) => c,
                Err(_) => break,
            };
            self.prefix
                .push(tree.nodes[child].action.expect("child has an action"));
            self.path.push(child);
            node = child;
            if tree.nodes[child].visits == 0 {
                break;
            }
        }
        let score = rollout(
            &self.prefix,
            &mut self.taken,
            &mut self.pool,
            &mut self.pattern,
            &mut self.scorer,
            self.ctx,
            rng,
        );
        tree.backup(&self.path, score);
        score
    }

    fn expand(&mut self, tree: &mut SearchTree, node: NodeId) {
        let n = self.ctx.grid.len();
        for &c in &self.prefix {
            self.taken[c] = true;
        }
        let actions = match self.prune_width {
            None => (0..n).filter(|&c| !self.taken[c]).collect::<Vec<_>>(),
            Some(width) => {
                let dist = match tree.nodes[node].parent {
                    Some(parent) => {
                        let added = tree.nodes[node].action.expect("non-root has action");
                        let mut d = tree.nodes[parent]
                            .dist_sum
                            .clone()
                            .expect("parent of an expanded node is expanded");
                        for (i, x) in self.ctx.grid.distance_row(added).iter().enumerate() {
                            d[i] += x;
                        }
                        d
                    }
                    None => {
                        let mut d = vec![0.0; n];
                        for &j in &self.prefix {
                            for (i, x) in self.ctx.grid.distance_row(j).iter().enumerate() {
                                d[i] += x;
                            }
                        }
                        d
                    }
                };
                let norm = SelectionNormalizers {
                    d_max: self.d_max,
                    dist_max: self.ctx.grid.diameter() * self.prefix.len() as f64,
                };
                let actions =
                    top_by_value(&self.taken, self.ctx.queue_packets, &dist, &norm, width);
                tree.nodes[node].dist_sum = Some(dist);
                actions
            }
        };
        for &c in &self.prefix {
            self.taken[c] = false;
        }
        tree.expand(node, &actions);
    }
}
