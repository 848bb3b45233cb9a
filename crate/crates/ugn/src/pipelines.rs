//! Task-specific feature builders and orchestration: network-confinement
//! node features, two-phase reaction prediction, per-category rating
//! features, knowledge-graph entity features, and few-shot subsampling.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Result, UgnError};
use crate::tensor::Tensor;

/// Network instance with per-node infection flags and a pairwise distance
/// matrix (0 encodes no connection; connected distances are >= 1).
#[derive(Debug, Clone)]
pub struct IotInstance {
    pub infected: Vec<bool>,
    pub distances: Tensor,
}

impl IotInstance {
    pub fn new(infected: Vec<bool>, distances: Tensor) -> Result<Self> {
        let n = infected.len();
        if distances.shape() != [n, n] {
            return Err(UgnError::shape("iot distances", distances.shape(), &[n, n]));
        }
        Ok(IotInstance {
            infected,
            distances,
        })
    }

    pub fn node_count(&self) -> usize {
        self.infected.len()
    }
}

/// Node features of width n: an all-ones row for infected nodes, all-zeros
/// otherwise.
pub fn iot_node_features(instance: &IotInstance) -> Tensor {
    let n = instance.node_count();
    let mut f = Tensor::zeros(vec![n, n]);
    for (i, &inf) in instance.infected.iter().enumerate() {
        if inf {
            for j in 0..n {
                f.set2(i, j, 1.0);
            }
        }
    }
    f
}

/// Inverse-distance profile of node `v`: 1/d to connected nodes, 0 to
/// disconnected ones, and 1 at the self position. Distances in (0, 1)
/// would push entries above 1 and are rejected.
pub fn inverse_distance_vector(instance: &IotInstance, v: usize) -> Result<Vec<f64>> {
    let n = instance.node_count();
    if v >= n {
        return Err(UgnError::InvalidArgument(format!(
            "node {v} outside 0..{n}"
        )));
    }
    let mut out = vec![0.0; n];
    for j in 0..n {
        if j == v {
            out[j] = 1.0;
            continue;
        }
        let d = instance.distances.get2(v, j);
        if d == 0.0 {
            continue;
        }
        if d < 1.0 {
            return Err(UgnError::InvalidArgument(format!(
                "distance {d} between {v} and {j} is below 1"
            )));
        }
        out[j] = 1.0 / d;
    }
    Ok(out)
}

/// Bond classes, encoded as evenly spaced values in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BondType {
    None,
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondType {
    pub fn code(self) -> f64 {
        match self {
            BondType::None => 0.0,
            BondType::Single => 0.25,
            BondType::Double => 0.5,
            BondType::Triple => 0.75,
            BondType::Aromatic => 1.0,
        }
    }

    pub fn from_code(code: f64) -> Result<Self> {
        match code {
            c if c == 0.0 => Ok(BondType::None),
            c if c == 0.25 => Ok(BondType::Single),
            c if c == 0.5 => Ok(BondType::Double),
            c if c == 0.75 => Ok(BondType::Triple),
            c if c == 1.0 => Ok(BondType::Aromatic),
            other => Err(UgnError::InvalidArgument(format!(
                "unknown bond code {other}"
            ))),
        }
    }

    pub fn class_index(self) -> usize {
        match self {
            BondType::None => 0,
            BondType::Single => 1,
            BondType::Double => 2,
            BondType::Triple => 3,
            BondType::Aromatic => 4,
        }
    }

    pub fn from_class_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(BondType::None),
            1 => Ok(BondType::Single),
            2 => Ok(BondType::Double),
            3 => Ok(BondType::Triple),
            4 => Ok(BondType::Aromatic),
            other => Err(UgnError::InvalidArgument(format!(
                "unknown bond class {other}"
            ))),
        }
    }
}

/// Reactant molecule with bonds stored per unordered atom pair.
#[derive(Debug, Clone)]
pub struct ReactionInstance {
    pub atom_count: usize,
    pub bonds: HashMap<(usize, usize), BondType>,
}

impl ReactionInstance {
    pub fn bond(&self, a: usize, b: usize) -> BondType {
        *self
            .bonds
            .get(&(a.min(b), a.max(b)))
            .unwrap_or(&BondType::None)
    }
}

/// Outcome of the two-phase prediction.
#[derive(Debug, Clone)]
pub struct TwoPhaseOutcome {
    /// Atoms flagged as participating by phase 1.
    pub changed_atoms: Vec<usize>,
    /// Product bond map: reactant bonds with phase-2 reclassification of
    /// pairs among changed atoms.
    pub product_bonds: HashMap<(usize, usize), BondType>,
    /// Model invocations made: `n + C(n_a, 2)`.
    pub prediction_count: usize,
}

/// Two-phase reaction prediction. `phase1` yields the probability that an
/// atom's bonds change; atoms above 0.5 go to `phase2`, which classifies
/// the bond for each pair of changed atoms. Pairs not covered by phase 2
/// keep their reactant bond.
pub fn chemistry_two_phase(
    reactant: &ReactionInstance,
    mut phase1: impl FnMut(usize) -> Result<f64>,
    mut phase2: impl FnMut(usize, usize) -> Result<BondType>,
) -> Result<TwoPhaseOutcome> {
    let n = reactant.atom_count;
    let mut changed = Vec::new();
    for atom in 0..n {
        if phase1(atom)? > 0.5 {
            changed.push(atom);
        }
    }
    let mut product = reactant.bonds.clone();
    let mut pair_predictions = 0usize;
    for (idx, &a) in changed.iter().enumerate() {
        for &b in &changed[idx + 1..] {
            pair_predictions += 1;
            let bond = phase2(a.min(b), a.max(b))?;
            let key = (a.min(b), a.max(b));
            if bond == BondType::None {
                product.remove(&key);
            } else {
                product.insert(key, bond);
            }
        }
    }
    Ok(TwoPhaseOutcome {
        changed_atoms: changed,
        product_bonds: product,
        prediction_count: n + pair_predictions,
    })
}

/// One product review: category in 0..27, rating and helpfulness in 1..=5.
#[derive(Debug, Clone, Copy)]
pub struct Rating {
    pub user: usize,
    pub category: usize,
    pub rating: u8,
    pub helpfulness: u8,
}

pub const RATING_CATEGORIES: usize = 27;

/// Per-user 54-wide features: mean rating per category followed by mean
/// helpfulness per category. Categories with no ratings stay 0.
pub fn epinions_user_features(ratings: &[Rating], n_users: usize) -> Result<Tensor> {
    let mut rating_sum = vec![0.0f64; n_users * RATING_CATEGORIES];
    let mut help_sum = vec![0.0f64; n_users * RATING_CATEGORIES];
    let mut counts = vec![0usize; n_users * RATING_CATEGORIES];
    for r in ratings {
        if r.user >= n_users {
            return Err(UgnError::InvalidArgument(format!(
                "user {} outside 0..{n_users}",
                r.user
            )));
        }
        if r.category >= RATING_CATEGORIES {
            return Err(UgnError::InvalidArgument(format!(
                "category {} outside 0..{RATING_CATEGORIES}",
                r.category
            )));
        }
        if !(1..=5).contains(&r.rating) || !(1..=5).contains(&r.helpfulness) {
            return Err(UgnError::InvalidArgument(format!(
                "rating/helpfulness ({}, {}) outside 1..=5",
                r.rating, r.helpfulness
            )));
        }
        let idx = r.user * RATING_CATEGORIES + r.category;
        rating_sum[idx] += r.rating as f64;
        help_sum[idx] += r.helpfulness as f64;
        counts[idx] += 1;
    }
    let mut f = Tensor::zeros(vec![n_users, 2 * RATING_CATEGORIES]);
    for u in 0..n_users {
        for c in 0..RATING_CATEGORIES {
            let idx = u * RATING_CATEGORIES + c;
            // Empty categories keep count 1 so their zero sums map to 0.
            let denom = counts[idx].max(1) as f64;
            f.set2(u, c, rating_sum[idx] / denom);
            f.set2(u, RATING_CATEGORIES + c, help_sum[idx] / denom);
        }
    }
    Ok(f)
}

/// Head entity, relation (0..37), tail entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KgTriple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

pub const KG_RELATIONS: usize = 37;

/// Per-entity features: a 37-wide one-hot union of relations the entity
/// heads, the same for relations it tails, and `rand_dim` uniforms
/// (94 wide at the default of 20).
pub fn kg_entity_features(
    triples: &[KgTriple],
    n_entities: usize,
    rand_dim: usize,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let width = 2 * KG_RELATIONS + rand_dim;
    let mut f = Tensor::zeros(vec![n_entities, width]);
    for t in triples {
        if t.relation >= KG_RELATIONS {
            return Err(UgnError::InvalidArgument(format!(
                "relation {} outside 0..{KG_RELATIONS}",
                t.relation
            )));
        }
        if t.head >= n_entities || t.tail >= n_entities {
            return Err(UgnError::InvalidArgument(format!(
                "triple ({}, {}, {}) references entity outside 0..{n_entities}",
                t.head, t.relation, t.tail
            )));
        }
        f.set2(t.head, t.relation, 1.0);
        f.set2(t.tail, KG_RELATIONS + t.relation, 1.0);
    }
    for e in 0..n_entities {
        for j in 0..rand_dim {
            f.set2(e, 2 * KG_RELATIONS + j, rng.gen_range(0.0..1.0));
        }
    }
    Ok(f)
}

/// Uniform per-relation subsample of at most `cap` triples each,
/// preserving input order within the kept set.
pub fn few_shot_subsample(
    triples: &[KgTriple],
    cap_per_relation: usize,
    rng: &mut impl Rng,
) -> Result<Vec<KgTriple>> {
    if cap_per_relation == 0 {
        return Err(UgnError::InvalidArgument(
            "per-relation cap must be at least 1".into(),
        ));
    }
    let mut by_relation: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, t) in triples.iter().enumerate() {
        by_relation.entry(t.relation).or_default().push(i);
    }
    let mut keep = Vec::new();
    let mut relations: Vec<usize> = by_relation.keys().copied().collect();
    relations.sort_unstable();
    for r in relations {
        let mut idxs = by_relation.remove(&r).unwrap();
        if idxs.len() > cap_per_relation {
            idxs.shuffle(rng);
            idxs.truncate(cap_per_relation);
        }
        keep.extend(idxs);
    }
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| triples[i]).collect())
}
