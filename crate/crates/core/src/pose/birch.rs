//! Birch clustering: a clustering-feature tree condenses the samples into
//! subclusters of bounded radius, then Ward agglomeration merges subclusters
//! down to the requested number of clusters, and every sample is assigned to
//! the nearest final centroid.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BirchConfig {
    /// Maximum subcluster radius.
    pub threshold: f64,
    /// Maximum number of entries per tree node.
    pub branching_factor: usize,
}

impl Default for BirchConfig {
    fn default() -> Self {
        Self { threshold: 0.5, branching_factor: 50 }
    }
}

/// Clustering feature: count, linear sum and sum of squared norms.
#[derive(Clone, Debug)]
struct Cf {
    n: f64,
    ls: Vec<f64>,
    ss: f64,
}

impl Cf {
    fn point(x: &[f64]) -> Self {
        Self { n: 1.0, ls: x.to_vec(), ss: x.iter().map(|v| v * v).sum() }
    }

    fn merge(&mut self, o: &Cf) {
        self.n += o.n;
        for (a, b) in self.ls.iter_mut().zip(&o.ls) {
            *a += b;
        }
        self.ss += o.ss;
    }

    fn centroid(&self) -> Vec<f64> {
        self.ls.iter().map(|v| v / self.n).collect()
    }

    fn radius_if_merged(&self, o: &Cf) -> f64 {
        let n = self.n + o.n;
        let ls2: f64 = self.ls.iter().zip(&o.ls).map(|(a, b)| (a + b) * (a + b)).sum();
        ((self.ss + o.ss) / n - ls2 / (n * n)).max(0.0).sqrt()
    }

    fn dist2(&self, o: &Cf) -> f64 {
        self.ls.iter().zip(&o.ls).map(|(a, b)| (a / self.n - b / o.n).powi(2)).sum()
    }
}

#[derive(Debug)]
enum Node {
    Leaf(Vec<Cf>),
    Inner(Vec<(Cf, Node)>),
}

fn closest<'a>(entries: impl Iterator<Item = &'a Cf>, x: &Cf) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, e) in entries.enumerate() {
        let d = e.dist2(x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Splits `items` into two groups seeded by the farthest pair of centroids.
fn split<E>(items: Vec<E>, cf: impl Fn(&E) -> &Cf) -> (Vec<E>, Vec<E>) {
    let mut far = (0, 1, -1.0);
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            let d = cf(&items[i]).dist2(cf(&items[j]));
            if d > far.2 {
                far = (i, j, d);
            }
        }
    }
    let (sa, sb) = (cf(&items[far.0]).clone(), cf(&items[far.1]).clone());
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, it) in items.into_iter().enumerate() {
        let to_a = if i == far.0 {
            true
        } else if i == far.1 {
            false
        } else {
            cf(&it).dist2(&sa) <= cf(&it).dist2(&sb)
        };
        if to_a {
            a.push(it);
        } else {
            b.push(it);
        }
    }
    (a, b)
}

fn summarize(node: &Node) -> Cf {
    let mut it: Box<dyn Iterator<Item = &Cf>> = match node {
        Node::Leaf(e) => Box::new(e.iter()),
        Node::Inner(c) => Box::new(c.iter().map(|(cf, _)| cf)),
    };
    let mut acc = it.next().expect("tree nodes are never empty").clone();
    for cf in it {
        acc.merge(cf);
    }
    acc
}

/// Inserts `x` below `node`; returns a sibling when the node had to split.
fn insert(node: &mut Node, x: &Cf, cfg: &BirchConfig) -> Option<Node> {
    match node {
        Node::Leaf(entries) => {
            if !entries.is_empty() {
                let i = closest(entries.iter(), x);
                if entries[i].radius_if_merged(x) <= cfg.threshold {
                    entries[i].merge(x);
                    return None;
                }
            }
            entries.push(x.clone());
            if entries.len() <= cfg.branching_factor {
                return None;
            }
            let (a, b) = split(std::mem::take(entries), |e| e);
            *entries = a;
            Some(Node::Leaf(b))
        }
        Node::Inner(children) => {
            let i = closest(children.iter().map(|(cf, _)| cf), x);
            let sibling = insert(&mut children[i].1, x, cfg);
            match sibling {
                None => {
                    children[i].0.merge(x);
                    None
                }
                Some(s) => {
                    children[i].0 = summarize(&children[i].1);
                    children.push((summarize(&s), s));
                    if children.len() <= cfg.branching_factor {
                        return None;
                    }
                    let (a, b) = split(std::mem::take(children), |(cf, _)| cf);
                    *children = a;
                    Some(Node::Inner(b))
                }
            }
        }
    }
}

fn collect_leaves(node: Node, out: &mut Vec<Cf>) {
    match node {
        Node::Leaf(e) => out.extend(e),
        Node::Inner(c) => c.into_iter().for_each(|(_, n)| collect_leaves(n, out)),
    }
}

/// Builds the CF tree and returns its leaf subclusters in insertion-stable order.
fn subclusters(data: &[Vec<f64>], cfg: &BirchConfig) -> Vec<Cf> {
    let cfg = BirchConfig { branching_factor: cfg.branching_factor.max(2), ..*cfg };
    let mut root = Node::Leaf(Vec::new());
    for x in data {
        if let Some(sibling) = insert(&mut root, &Cf::point(x), &cfg) {
            let old = std::mem::replace(&mut root, Node::Leaf(Vec::new()));
            root = Node::Inner(vec![(summarize(&old), old), (summarize(&sibling), sibling)]);
        }
    }
    let mut out = Vec::new();
    collect_leaves(root, &mut out);
    out
}

/// Ward agglomeration of weighted subclusters; returns merged CFs.
fn ward(mut cfs: Vec<Cf>, target: usize) -> Vec<Cf> {
    let target = target.max(1);
    let cost = |a: &Cf, b: &Cf| a.n * b.n / (a.n + b.n) * a.dist2(b);
    let mut alive: Vec<bool> = vec![true; cfs.len()];
    let mut count = cfs.len();
    // Cached nearest neighbour per cluster.
    let mut nn: Vec<(usize, f64)> = vec![(usize::MAX, f64::INFINITY); cfs.len()];
    let refresh = |i: usize, cfs: &[Cf], alive: &[bool]| {
        let mut best = (usize::MAX, f64::INFINITY);
        for j in 0..cfs.len() {
            if j != i && alive[j] {
                let c = cost(&cfs[i], &cfs[j]);
                if c < best.1 {
                    best = (j, c);
                }
            }
        }
        best
    };
    for i in 0..cfs.len() {
        nn[i] = refresh(i, &cfs, &alive);
    }
    while count > target {
        let mut a = usize::MAX;
        for i in 0..cfs.len() {
            if alive[i] && (a == usize::MAX || nn[i].1 < nn[a].1) {
                a = i;
            }
        }
        let b = nn[a].0;
        let (lo, hi) = (a.min(b), a.max(b));
        let other = cfs[hi].clone();
        cfs[lo].merge(&other);
        alive[hi] = false;
        count -= 1;
        for i in 0..cfs.len() {
            if alive[i] && (i == lo || nn[i].0 == lo || nn[i].0 == hi) {
                nn[i] = refresh(i, &cfs, &alive);
            } else if alive[i] {
                let c = cost(&cfs[i], &cfs[lo]);
                if c < nn[i].1 {
                    nn[i] = (lo, c);
                }
            }
        }
    }
    cfs.into_iter().zip(alive).filter(|(_, a)| *a).map(|(c, _)| c).collect()
}

/// Result of a Birch run: centroids and one label per input sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Clusters `data` into at most `target` groups. Deterministic: no
/// randomness is involved, results depend only on the input order.
/// Empty clusters after the final nearest-centroid assignment are dropped and
/// labels renumbered by first appearance.
pub fn birch(data: &[Vec<f64>], target: usize, cfg: &BirchConfig) -> Clustering {
    if data.is_empty() {
        return Clustering { centroids: Vec::new(), labels: Vec::new() };
    }
    let merged = ward(subclusters(data, cfg), target);
    let centroids: Vec<Vec<f64>> = merged.iter().map(Cf::centroid).collect();
    let raw: Vec<usize> = data
        .iter()
        .map(|x| {
            let p = Cf::point(x);
            let mut best = (0, f64::INFINITY);
            for (i, c) in merged.iter().enumerate() {
                let d = c.dist2(&p);
                if d < best.1 {
                    best = (i, d);
                }
            }
            best.0
        })
        .collect();
    let mut remap = vec![usize::MAX; centroids.len()];
    let mut next = 0;
    let mut labels = Vec::with_capacity(raw.len());
    for r in raw {
        if remap[r] == usize::MAX {
            remap[r] = next;
            next += 1;
        }
        labels.push(remap[r]);
    }
    // Recompute centroids from the final assignment.
    let dim = data[0].len();
    let mut sums = vec![vec![0.0; dim]; next];
    let mut counts = vec![0usize; next];
    for (x, &l) in data.iter().zip(&labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(x) {
            *s += v;
        }
    }
    let centroids = sums.into_iter().zip(counts).map(|(s, c)| s.into_iter().map(|v| v / c as f64).collect()).collect();
    Clustering { centroids, labels }
}
