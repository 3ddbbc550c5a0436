//! The scoring head: local-descriptor prototypes, co-occurrence (rectify)
//! weights, weighted top-k scaled-cosine similarity and the softmax
//! classifier, plus the closed-form temperature gradient.
//!
//! For a query map with descriptors `v_j` and a prototype with descriptors
//! `u_i`, the class logit is
//!
//! ```text
//! logit = Σ_j W_j · topk_i( τ · cos(u_i, v_j) )
//! raw_j = Σ_i max(0, cos(u_i, v_j))^ω,   W_j = r_q · raw_j / Σ raw
//! ```
//!
//! With weighting disabled `W ≡ 1`, which is plain local-descriptor k-NN
//! scoring (see [`knn_logit`]).

use crate::error::{Error, Result};
use crate::tensor::{
    cross_entropy, map_cosines, softmax, top_k_sum_in_place, unit_dot_matrix, FeatureMap, Matrix,
    ProbVector, NORM_EPS,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub class_id: usize,
    pub map: FeatureMap,
}

/// One non-negative weight per query position, mean one.
#[derive(Debug, Clone, PartialEq)]
pub struct RectifyWeights {
    values: Vec<f64>,
    fallback: bool,
}

impl RectifyWeights {
    pub fn uniform(len: usize) -> Self {
        Self {
            values: vec![1.0; len],
            fallback: false,
        }
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Parameter("rectify weights must be finite and >= 0".into()));
        }
        Ok(Self {
            values,
            fallback: false,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when every raw co-occurrence vanished and the uniform weights were substituted.
    pub fn is_fallback(&self) -> bool {
        self.fallback
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub k: usize,
    pub tau: f64,
    pub omega: f64,
    pub use_weight: bool,
    /// When off the exponent is 1 regardless of `omega`.
    pub use_pow: bool,
    pub use_protoaug: bool,
    /// Average query logits over all scales instead of scoring the base scale only.
    pub multiscale_queries: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            k: 3,
            tau: 10.0,
            omega: 2.0,
            use_weight: true,
            use_pow: true,
            use_protoaug: true,
            multiscale_queries: false,
        }
    }
}

impl HeadConfig {
    /// Plain k-NN scoring: no weighting, no exponent, no multi-scale prototypes.
    pub fn baseline() -> Self {
        Self {
            use_weight: false,
            use_pow: false,
            use_protoaug: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Parameter("k must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Parameter(format!("tau = {} must be positive", self.tau)));
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::Parameter(format!("omega = {} must be positive", self.omega)));
        }
        Ok(())
    }

    pub fn exponent(&self) -> f64 {
        if self.use_pow {
            self.omega
        } else {
            1.0
        }
    }

    /// Short run name derived from the component toggles.
    pub fn label(&self) -> String {
        match (self.use_weight, self.use_pow, self.use_protoaug) {
            (false, false, false) => "baseline".into(),
            (true, true, true) => "full".into(),
            (w, p, a) => {
                let parts: Vec<&str> = [(w, "weight"), (p, "pow"), (a, "protoaug")]
                    .into_iter()
                    .filter_map(|(on, name)| on.then_some(name))
                    .collect();
                parts.join("+")
            }
        }
    }
}

/// Cell-wise mean of the support maps of one class.
pub fn compute_prototype(support_maps: &[FeatureMap], class_id: usize) -> Result<Prototype> {
    let first = support_maps
        .first()
        .ok_or_else(|| Error::Parameter(format!("class {class_id} has no support maps")))?;
    let shape = first.shape();
    let mut acc = vec![0.0; first.data().len()];
    for (n, map) in support_maps.iter().enumerate() {
        if map.shape() != shape {
            return Err(Error::Dimension(format!(
                "support map {n} of class {class_id} has shape {:?}, expected {shape:?}",
                map.shape()
            )));
        }
        for (a, v) in acc.iter_mut().zip(map.data()) {
            *a += v;
        }
    }
    let n = support_maps.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(Prototype {
        class_id,
        map: FeatureMap::new(shape.0, shape.1, shape.2, acc)?,
    })
}

fn check_dims(query: &FeatureMap, proto: &Prototype) -> Result<()> {
    if query.dim() != proto.map.dim() {
        return Err(Error::Dimension(format!(
            "query descriptors have dim {}, prototype {} has {}",
            query.dim(),
            proto.class_id,
            proto.map.dim()
        )));
    }
    Ok(())
}

/// Weights from a prototype-by-query cosine matrix (`rows` = prototype positions).
pub(crate) fn weights_from_cosines(cos: &Matrix, exponent: f64) -> RectifyWeights {
    let rq = cos.cols;
    let mut raw = vec![0.0; rq];
    for i in 0..cos.rows {
        for (r, &c) in raw.iter_mut().zip(cos.row(i)) {
            let c = c.max(0.0);
            *r += if exponent == 1.0 { c } else { c.powf(exponent) };
        }
    }
    let total: f64 = raw.iter().sum();
    if total < NORM_EPS {
        return RectifyWeights {
            values: vec![1.0; rq],
            fallback: true,
        };
    }
    let scale = rq as f64;
    RectifyWeights {
        values: raw.into_iter().map(|r| scale * r / total).collect(),
        fallback: false,
    }
}

/// Co-occurrence weight of every query position against `reference`.
pub fn rectify_weights(
    query_map: &FeatureMap,
    reference: &Prototype,
    omega: f64,
    use_pow: bool,
) -> Result<RectifyWeights> {
    check_dims(query_map, reference)?;
    if omega.is_nan() || omega <= 0.0 {
        return Err(Error::Parameter(format!("omega = {omega} must be positive")));
    }
    let cos = map_cosines(&reference.map, query_map)?;
    Ok(weights_from_cosines(&cos, if use_pow { omega } else { 1.0 }))
}

fn check_k(k: usize, r: usize) -> Result<()> {
    if k == 0 || k > r {
        return Err(Error::Parameter(format!(
            "k = {k} outside 1..={r} prototype positions"
        )));
    }
    Ok(())
}

/// Weighted sum over query positions of each position's top-k scaled cosines.
pub(crate) fn similarity_from_cosines(
    cos: &Matrix,
    weights: Option<&[f64]>,
    k: usize,
    tau: f64,
    scratch: &mut Vec<f64>,
) -> f64 {
    let mut total = 0.0;
    for j in 0..cos.cols {
        scratch.clear();
        scratch.extend((0..cos.rows).map(|i| tau * cos.get(i, j)));
        let best = top_k_sum_in_place(scratch, k);
        total += match weights {
            Some(w) => w[j] * best,
            None => best,
        };
    }
    total
}

pub fn similarity(
    proto: &Prototype,
    query_map: &FeatureMap,
    weights: &RectifyWeights,
    k: usize,
    tau: f64,
) -> Result<f64> {
    check_dims(query_map, proto)?;
    check_k(k, proto.map.positions())?;
    if weights.len() != query_map.positions() {
        return Err(Error::Dimension(format!(
            "{} weights for {} query positions",
            weights.len(),
            query_map.positions()
        )));
    }
    let cos = map_cosines(&proto.map, query_map)?;
    Ok(similarity_from_cosines(
        &cos,
        Some(weights.values()),
        k,
        tau,
        &mut Vec::new(),
    ))
}

/// Unweighted local-descriptor k-NN score: for every query descriptor, the
/// sum of its `k` best scaled cosines against the prototype.
pub fn knn_logit(proto: &Prototype, query_map: &FeatureMap, k: usize, tau: f64) -> Result<f64> {
    check_dims(query_map, proto)?;
    check_k(k, proto.map.positions())?;
    let cos = map_cosines(&proto.map, query_map)?;
    Ok(similarity_from_cosines(&cos, None, k, tau, &mut Vec::new()))
}

/// Prototypes with unit-normalized descriptors, reusable across many queries.
#[derive(Debug, Clone)]
pub struct PreparedPrototypes {
    units: Vec<FeatureMap>,
}

impl PreparedPrototypes {
    pub fn new(prototypes: &[Prototype]) -> Self {
        Self {
            units: prototypes.iter().map(|p| p.map.normalized()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    fn check(&self, query: &FeatureMap, config: &HeadConfig) -> Result<()> {
        config.validate()?;
        if self.units.len() < 2 {
            return Err(Error::Parameter(format!(
                "classification needs at least 2 prototypes, got {}",
                self.units.len()
            )));
        }
        for (c, u) in self.units.iter().enumerate() {
            if u.dim() != query.dim() {
                return Err(Error::Dimension(format!(
                    "query dim {} vs prototype {c} dim {}",
                    query.dim(),
                    u.dim()
                )));
            }
            check_k(config.k, u.positions())?;
        }
        Ok(())
    }

    /// Per-class logits for `query`.
    pub fn logits(&self, query: &FeatureMap, config: &HeadConfig) -> Result<Vec<f64>> {
        self.check(query, config)?;
        let q = query.normalized();
        Ok(self.logits_unit(&q, config))
    }

    /// `query_unit` must already be row-normalized and validated.
    pub(crate) fn logits_unit(&self, query_unit: &FeatureMap, config: &HeadConfig) -> Vec<f64> {
        let mut scratch = Vec::new();
        self.units
            .iter()
            .map(|proto| {
                let cos = unit_dot_matrix(proto.data(), query_unit.data(), query_unit.dim());
                if config.use_weight {
                    let w = weights_from_cosines(&cos, config.exponent());
                    similarity_from_cosines(&cos, Some(w.values()), config.k, config.tau, &mut scratch)
                } else {
                    similarity_from_cosines(&cos, None, config.k, config.tau, &mut scratch)
                }
            })
            .collect()
    }
}

/// Per-class logits of `query_map` against `prototypes`.
pub fn class_logits(
    prototypes: &[Prototype],
    query_map: &FeatureMap,
    config: &HeadConfig,
) -> Result<Vec<f64>> {
    PreparedPrototypes::new(prototypes).logits(query_map, config)
}

/// Softmax over the per-class logits; the predicted class is the argmax
/// (lowest index on ties).
pub fn classify(
    prototypes: &[Prototype],
    query_map: &FeatureMap,
    config: &HeadConfig,
) -> Result<ProbVector> {
    Ok(softmax(&class_logits(prototypes, query_map, config)?))
}

fn check_logits(logits: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::Dimension(format!(
            "{} logit vectors for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    for (l, &y) in logits.iter().zip(labels) {
        if y >= l.len() {
            return Err(Error::Parameter(format!("label {y} outside {} classes", l.len())));
        }
    }
    Ok(())
}

/// Mean cross-entropy of a batch of logit vectors.
pub fn mean_cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_logits(logits, labels)?;
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(l, &y)| cross_entropy(l, y))
        .sum();
    Ok(total / logits.len() as f64)
}

/// d(mean cross-entropy)/dτ for logits produced at temperature `tau`.
///
/// Every logit is linear in τ, so d logit_c/dτ = logit_c/τ.
pub fn tau_gradient(logits: &[Vec<f64>], labels: &[usize], tau: f64) -> Result<f64> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Parameter(format!("tau = {tau} must be positive")));
    }
    check_logits(logits, labels)?;
    let mut total = 0.0;
    for (l, &y) in logits.iter().zip(labels) {
        let p = softmax(l);
        for (c, (&pc, &lc)) in p.values().iter().zip(l).enumerate() {
            let target = if c == y { 1.0 } else { 0.0 };
            total += (pc - target) * lc / tau;
        }
    }
    Ok(total / logits.len() as f64)
}

/// Logits of one episode evaluated at τ = 1, ready for temperature fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct TauEpisode {
    pub unit_logits: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauFit {
    pub tau: f64,
    /// Loss before each step, followed by the loss at the final τ.
    pub losses: Vec<f64>,
}

pub const TAU_MIN: f64 = 1e-3;
pub const TAU_MAX: f64 = 1e3;

fn scaled(episodes: &[TauEpisode], tau: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut logits = Vec::new();
    let mut labels = Vec::new();
    for ep in episodes {
        for (l, &y) in ep.unit_logits.iter().zip(&ep.labels) {
            logits.push(l.iter().map(|x| tau * x).collect());
            labels.push(y);
        }
    }
    (logits, labels)
}

/// Mean cross-entropy over every query of every episode at temperature `tau`.
pub fn tau_loss(episodes: &[TauEpisode], tau: f64) -> Result<f64> {
    let (logits, labels) = scaled(episodes, tau);
    mean_cross_entropy(&logits, &labels)
}

/// Plain gradient descent on τ, clamped to `[TAU_MIN, TAU_MAX]`.
pub fn fit_tau(
    episodes: &[TauEpisode],
    initial_tau: f64,
    learning_rate: f64,
    steps: usize,
) -> Result<TauFit> {
    if steps == 0 {
        return Err(Error::Parameter("fit_tau needs at least one step".into()));
    }
    if !learning_rate.is_finite() || learning_rate < 0.0 {
        return Err(Error::Parameter(format!("learning rate {learning_rate}")));
    }
    if !(TAU_MIN..=TAU_MAX).contains(&initial_tau) {
        return Err(Error::Parameter(format!(
            "initial tau {initial_tau} outside [{TAU_MIN}, {TAU_MAX}]"
        )));
    }
    let mut tau = initial_tau;
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let (logits, labels) = scaled(episodes, tau);
        losses.push(mean_cross_entropy(&logits, &labels)?);
        let grad = tau_gradient(&logits, &labels, tau)?;
        tau = (tau - learning_rate * grad).clamp(TAU_MIN, TAU_MAX);
    }
    losses.push(tau_loss(episodes, tau)?);
    Ok(TauFit { tau, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::cosine;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn proto(rows: &[Vec<f64>], class_id: usize) -> Prototype {
        Prototype {
            class_id,
            map: FeatureMap::from_rows(rows).unwrap(),
        }
    }

    fn random_map(rng: &mut ChaCha8Rng, r: usize, d: usize) -> FeatureMap {
        FeatureMap::new(r, 1, d, (0..r * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    // brute force: all r x r cosines, then per query descriptor a full sort
    fn similarity_oracle(p: &FeatureMap, q: &FeatureMap, w: &[f64], k: usize, tau: f64) -> f64 {
        let mut total = 0.0;
        for j in 0..q.positions() {
            let mut s: Vec<f64> = (0..p.positions())
                .map(|i| tau * cosine(p.descriptor(i), q.descriptor(j)).unwrap())
                .collect();
            s.sort_by(|a, b| b.partial_cmp(a).unwrap());
            total += w[j] * s[..k].iter().sum::<f64>();
        }
        total
    }

    #[test]
    fn prototype_of_one_map_is_that_map() {
        let m = FeatureMap::new(2, 1, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(compute_prototype(std::slice::from_ref(&m), 4).unwrap().map, m);
    }

    #[test]
    fn prototype_midpoint() {
        let a = FeatureMap::new(1, 1, 2, vec![2.0, 0.0]).unwrap();
        let b = FeatureMap::new(1, 1, 2, vec![0.0, 2.0]).unwrap();
        assert_eq!(compute_prototype(&[a, b], 0).unwrap().map.data(), &[1.0, 1.0]);
    }

    #[test]
    fn prototype_matches_scalar_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let maps: Vec<FeatureMap> = (0..5)
            .map(|_| FeatureMap::new(5, 5, 8, (0..200).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap())
            .collect();
        let p = compute_prototype(&maps, 1).unwrap();
        for idx in 0..200 {
            let mut s = 0.0;
            for m in &maps {
                s += m.data()[idx];
            }
            assert_abs_diff_eq!(p.map.data()[idx], s / 5.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn prototype_errors() {
        assert!(matches!(compute_prototype(&[], 0), Err(Error::Parameter(_))));
        let a = FeatureMap::zeros(2, 2, 3).unwrap();
        let b = FeatureMap::zeros(2, 1, 3).unwrap();
        assert!(matches!(compute_prototype(&[a, b], 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn rectify_self_match_is_uniform() {
        let rows = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let w = rectify_weights(&FeatureMap::from_rows(&rows).unwrap(), &proto(&rows, 0), 2.0, true).unwrap();
        assert_eq!(w.values(), &[1.0, 1.0, 1.0]);
        assert!(!w.is_fallback());
    }

    #[test]
    fn rectify_orthogonal_falls_back() {
        let q = FeatureMap::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let p = proto(&[vec![0.0, 0.0, 1.0], vec![0.0, 0.0, -4.0]], 0);
        let w = rectify_weights(&q, &p, 2.0, true).unwrap();
        assert_eq!(w.values(), &[1.0, 1.0]);
        assert!(w.is_fallback());
    }

    #[test]
    fn rectify_hand_example() {
        // raw_0 = 1^2 + 0^2 = 1, raw_1 = (1/√2)^2 + (1/√2)^2 = 1
        let p = proto(&[vec![1.0, 0.0], vec![0.0, 1.0]], 0);
        let q = FeatureMap::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let w = rectify_weights(&q, &p, 2.0, true).unwrap();
        assert_abs_diff_eq!(w.values()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.values()[1], 1.0, epsilon = 1e-12);

        // without the exponent raw = [1, √2], so W = 2·[1, √2]/(1+√2)
        let w = rectify_weights(&q, &p, 2.0, false).unwrap();
        let s2 = 2f64.sqrt();
        assert_abs_diff_eq!(w.values()[0], 2.0 / (1.0 + s2), epsilon = 1e-12);
        assert_abs_diff_eq!(w.values()[1], 2.0 * s2 / (1.0 + s2), epsilon = 1e-12);
    }

    #[test]
    fn rectify_clamps_negative_cosines() {
        let p = proto(&[vec![1.0, 0.0]], 0);
        let q = FeatureMap::from_rows(&[vec![-1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let w = rectify_weights(&q, &p, 0.5, true).unwrap();
        assert_eq!(w.values(), &[0.0, 2.0]);
    }

    #[test]
    fn rectify_dim_mismatch() {
        let p = proto(&[vec![1.0, 0.0]], 0);
        let q = FeatureMap::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(rectify_weights(&q, &p, 2.0, true), Err(Error::Dimension(_))));
    }

    #[test]
    fn similarity_self_match_counts_positions() {
        let rows = vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ];
        let p = proto(&rows, 0);
        let q = FeatureMap::from_rows(&rows).unwrap();
        let w = RectifyWeights::uniform(4);
        assert_eq!(similarity(&p, &q, &w, 1, 1.0).unwrap(), 4.0);
    }

    #[test]
    fn similarity_is_linear_in_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = Prototype { class_id: 0, map: random_map(&mut rng, 5, 4) };
        let q = random_map(&mut rng, 6, 4);
        let w = rectify_weights(&q, &p, 2.0, true).unwrap();
        let a = similarity(&p, &q, &w, 2, 3.0).unwrap();
        let b = similarity(&p, &q, &w, 2, 6.0).unwrap();
        assert_eq!(b, 2.0 * a);
    }

    #[test]
    fn similarity_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let p = Prototype { class_id: 0, map: random_map(&mut rng, 4, 3) };
            let q = random_map(&mut rng, 4, 3);
            let w = rectify_weights(&q, &p, 2.0, true).unwrap();
            let got = similarity(&p, &q, &w, 2, 1.7).unwrap();
            let want = similarity_oracle(&p.map, &q, w.values(), 2, 1.7);
            assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn similarity_rejects_bad_k_and_weights() {
        let p = proto(&[vec![1.0, 0.0], vec![0.0, 1.0]], 0);
        let q = FeatureMap::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let w = RectifyWeights::uniform(1);
        assert!(matches!(similarity(&p, &q, &w, 3, 1.0), Err(Error::Parameter(_))));
        assert!(matches!(similarity(&p, &q, &w, 0, 1.0), Err(Error::Parameter(_))));
        assert!(matches!(
            similarity(&p, &q, &RectifyWeights::uniform(2), 1, 1.0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn classify_self_match_wins() {
        let rows = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let p1 = proto(&rows, 0);
        let p2 = proto(&[vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 2.0]], 1);
        let q = FeatureMap::from_rows(&rows).unwrap();
        let cfg = HeadConfig { k: 1, ..HeadConfig::default() };
        let p = classify(&[p1, p2], &q, &cfg).unwrap();
        assert!(p.values()[0] > 0.5);
        assert_eq!(p.argmax(), 0);
    }

    #[test]
    fn classify_identical_prototypes_is_even() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = random_map(&mut rng, 4, 3);
        let protos = [Prototype { class_id: 0, map: m.clone() }, Prototype { class_id: 1, map: m }];
        let q = random_map(&mut rng, 4, 3);
        let p = classify(&protos, &q, &HeadConfig::default()).unwrap();
        assert_eq!(p.values(), &[0.5, 0.5]);
        assert_eq!(p.argmax(), 0);
    }

    #[test]
    fn classify_needs_two_prototypes() {
        let p = proto(&vec![vec![1.0, 0.0]; 3], 0);
        let q = FeatureMap::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(classify(&[p], &q, &HeadConfig::default()).is_err());
    }

    #[test]
    fn weight_off_equals_knn() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let protos: Vec<_> = (0..3).map(|c| Prototype { class_id: c, map: random_map(&mut rng, 6, 5) }).collect();
        let q = random_map(&mut rng, 6, 5);
        let cfg = HeadConfig { use_weight: false, ..HeadConfig::default() };
        let logits = class_logits(&protos, &q, &cfg).unwrap();
        for (p, l) in protos.iter().zip(&logits) {
            assert_eq!(*l, knn_logit(p, &q, cfg.k, cfg.tau).unwrap());
        }
    }

    #[test]
    fn tau_gradient_zero_logits() {
        let g = tau_gradient(&[vec![0.0; 4], vec![0.0; 4]], &[1, 3], 2.0).unwrap();
        assert_eq!(g, 0.0);
    }

    #[test]
    fn tau_gradient_hand_case() {
        let e = std::f64::consts::E;
        let s1 = e / (e + 1.0);
        let g = tau_gradient(&[vec![1.0, 0.0]], &[0], 1.0).unwrap();
        assert_abs_diff_eq!(g, s1 - 1.0, epsilon = 1e-15);
    }

    #[test]
    fn tau_gradient_rejects_nonpositive_tau() {
        assert!(tau_gradient(&[vec![1.0, 0.0]], &[0], 0.0).is_err());
        assert!(tau_gradient(&[vec![1.0, 0.0]], &[0], -1.0).is_err());
    }

    #[test]
    fn fit_tau_fixed_points() {
        let zero = [TauEpisode { unit_logits: vec![vec![0.0; 3]; 2], labels: vec![0, 2] }];
        assert_eq!(fit_tau(&zero, 7.0, 0.5, 10).unwrap().tau, 7.0);
        let sep = [TauEpisode { unit_logits: vec![vec![2.0, 0.5], vec![0.1, 1.0]], labels: vec![0, 1] }];
        let fit = fit_tau(&sep, 7.0, 0.0, 10).unwrap();
        assert_eq!(fit.tau, 7.0);
        assert_eq!(fit.losses.len(), 11);
        assert!(fit_tau(&sep, 1.0, 0.1, 0).is_err());
    }

    #[test]
    fn fit_tau_sharpens_separable_episodes() {
        let sep = [TauEpisode { unit_logits: vec![vec![2.0, 0.5], vec![0.1, 1.0]], labels: vec![0, 1] }];
        let fit = fit_tau(&sep, 1.0, 0.5, 50).unwrap();
        assert!(fit.tau > 1.0);
        assert!(fit.losses.last().unwrap() < &fit.losses[0]);
        assert!(fit.tau <= TAU_MAX);
    }

    #[test]
    fn labels_from_toggles() {
        assert_eq!(HeadConfig::baseline().label(), "baseline");
        assert_eq!(HeadConfig::default().label(), "full");
        let w = HeadConfig { use_pow: false, use_protoaug: false, ..HeadConfig::default() };
        assert_eq!(w.label(), "weight");
        let wp = HeadConfig { use_protoaug: false, ..HeadConfig::default() };
        assert_eq!(wp.label(), "weight+pow");
    }
}
