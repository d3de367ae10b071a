//! Tabular toy data: categorical Region/Object/Speed samples drawn from
//! hint-constrained conditionals, with anomalies that break the rules.

use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TOY_REGIONS: [&str; 4] = ["walkway", "bicycle lane", "car lane", "park lane"];
pub const TOY_OBJECTS: [&str; 3] = ["car", "person", "cyclist"];
pub const TOY_SPEEDS: [&str; 3] = ["fast", "medium", "slow"];
/// One-hot widths: 4 regions + 3 objects + 3 speeds.
pub const TOY_FEATURE_DIM: usize = 10;

/// Categorical normalcy rules. A hint pins an exact conditional
/// probability; a zero forbids the pair outright; every outcome a rule
/// does not mention shares the leftover mass in proportion to the
/// variable's default marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRuleSet {
    /// P(Region); the sampler draws regions straight from this.
    pub region_marginal: [f64; 4],
    pub object_default: [f64; 3],
    pub speed_default: [f64; 3],
    /// Exact P(object | region) pins, by index.
    pub region_object_hints: Vec<(usize, usize, f64)>,
    /// Forbidden (region, object) pairs.
    pub region_object_zeros: Vec<(usize, usize)>,
    /// Exact P(speed | object) pins.
    pub object_speed_hints: Vec<(usize, usize, f64)>,
    /// Forbidden (object, speed) pairs.
    pub object_speed_zeros: Vec<(usize, usize)>,
}

impl ToyRuleSet {
    /// The published rule table: pedestrians keep to walkways, cyclists
    /// to bike lanes, cars run fast in car lanes, and the park lane
    /// mixes slow traffic. The 0.1 on (cyclist, fast) is a pin, not a
    /// prohibition, so fast cyclists stay (barely) normal.
    pub fn street() -> ToyRuleSet {
        let region = |name: &str| TOY_REGIONS.iter().position(|r| *r == name).unwrap();
        let object = |name: &str| TOY_OBJECTS.iter().position(|o| *o == name).unwrap();
        let speed = |name: &str| TOY_SPEEDS.iter().position(|s| *s == name).unwrap();
        ToyRuleSet {
            region_marginal: [0.25, 0.25, 0.25, 0.25],
            object_default: [0.33, 0.33, 0.34],
            speed_default: [0.3, 0.5, 0.2],
            region_object_hints: vec![
                (region("walkway"), object("person"), 1.0),
                (region("bicycle lane"), object("cyclist"), 1.0),
                (region("car lane"), object("car"), 0.8),
                (region("park lane"), object("person"), 0.3),
            ],
            region_object_zeros: vec![
                (region("walkway"), object("car")),
                (region("bicycle lane"), object("car")),
                (region("car lane"), object("person")),
                (region("park lane"), object("cyclist")),
            ],
            object_speed_hints: vec![
                (object("car"), speed("fast"), 0.8),
                (object("person"), speed("slow"), 0.7),
                (object("cyclist"), speed("medium"), 0.9),
                (object("cyclist"), speed("fast"), 0.1),
            ],
            object_speed_zeros: vec![
                (object("car"), speed("slow")),
                (object("person"), speed("fast")),
            ],
        }
    }

    /// P(object | region) for every region, rows normalized.
    pub fn object_conditionals(&self) -> Result<Vec<[f64; 3]>> {
        (0..4)
            .map(|r| {
                conditional_row(
                    &self.object_default,
                    &pins_for(r, &self.region_object_hints),
                    &zeros_for(r, &self.region_object_zeros),
                    &format!("P(object | region={})", TOY_REGIONS[r]),
                )
            })
            .collect()
    }

    /// P(speed | object) for every object, rows normalized.
    pub fn speed_conditionals(&self) -> Result<Vec<[f64; 3]>> {
        (0..3)
            .map(|o| {
                conditional_row(
                    &self.speed_default,
                    &pins_for(o, &self.object_speed_hints),
                    &zeros_for(o, &self.object_speed_zeros),
                    &format!("P(speed | object={})", TOY_OBJECTS[o]),
                )
            })
            .collect()
    }
}

fn pins_for(row: usize, hints: &[(usize, usize, f64)]) -> Vec<(usize, f64)> {
    hints
        .iter()
        .filter(|(r, _, _)| *r == row)
        .map(|(_, c, p)| (*c, *p))
        .collect()
}

fn zeros_for(row: usize, zeros: &[(usize, usize)]) -> Vec<usize> {
    zeros
        .iter()
        .filter(|(r, _)| *r == row)
        .map(|(_, c)| *c)
        .collect()
}

/// Build one conditional row of width 3: zeros forbid, pins fix, and the
/// remaining mass spreads over unmentioned outcomes proportionally to
/// the defaults.
fn conditional_row(
    defaults: &[f64; 3],
    pins: &[(usize, f64)],
    zeros: &[usize],
    what: &str,
) -> Result<[f64; 3]> {
    let mut row = [f64::NAN; 3];
    for &z in zeros {
        row[z] = 0.0;
    }
    let mut pinned_mass = 0.0;
    for &(c, p) in pins {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid_argument(format!(
                "{what}: hint probability {p} outside [0, 1]"
            )));
        }
        if !row[c].is_nan() {
            return Err(Error::invalid_argument(format!(
                "{what}: outcome {c} both pinned and zeroed"
            )));
        }
        row[c] = p;
        pinned_mass += p;
    }
    if pinned_mass > 1.0 + 1e-12 {
        return Err(Error::invalid_argument(format!(
            "{what}: hints sum to {pinned_mass} > 1"
        )));
    }
    let free: Vec<usize> = (0..3).filter(|&c| row[c].is_nan()).collect();
    let leftover = (1.0 - pinned_mass).max(0.0);
    let default_mass: f64 = free.iter().map(|&c| defaults[c]).sum();
    for &c in &free {
        row[c] = if default_mass > 0.0 {
            leftover * defaults[c] / default_mass
        } else {
            0.0
        };
    }
    if row.iter().sum::<f64>() <= 0.0 {
        return Err(Error::invalid_argument(format!(
            "{what}: conditional row is all zero and cannot be normalized"
        )));
    }
    Ok(row)
}

/// One (region, object, speed) draw with its rule-check label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToySample {
    pub region: usize,
    pub object: usize,
    pub speed: usize,
    pub anomalous: bool,
}

impl ToySample {
    /// Concatenated one-hot encoding in R^10.
    pub fn feature(&self) -> Array1<f64> {
        let mut v = Array1::zeros(TOY_FEATURE_DIM);
        v[self.region] = 1.0;
        v[4 + self.object] = 1.0;
        v[7 + self.speed] = 1.0;
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyData {
    pub train: Vec<ToySample>,
    pub test: Vec<ToySample>,
}

/// Draw `n_train` rule-conforming training samples and an `n_test`-sample
/// test split: the first half rule-conforming, the second half with
/// Object and Speed uniform. Every test label comes from re-checking the
/// rules, so a uniform draw that happens to conform stays normal.
pub fn generate_toy(rules: &ToyRuleSet, n_train: usize, n_test: usize, seed: u64) -> Result<ToyData> {
    let marginal_sum: f64 = rules.region_marginal.iter().sum();
    if rules.region_marginal.iter().any(|&p| p < 0.0) || marginal_sum <= 0.0 {
        return Err(Error::invalid_argument("region marginal must be normalizable"));
    }
    let object_given_region = rules.object_conditionals()?;
    let speed_given_object = rules.speed_conditionals()?;
    let conforms = |r: usize, o: usize, s: usize| {
        object_given_region[r][o] > 0.0 && speed_given_object[o][s] > 0.0
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw_conforming = |rng: &mut ChaCha8Rng| {
        let r = sample_categorical(rng, &rules.region_marginal);
        let o = sample_categorical(rng, &object_given_region[r]);
        let s = sample_categorical(rng, &speed_given_object[o]);
        ToySample {
            region: r,
            object: o,
            speed: s,
            anomalous: !conforms(r, o, s),
        }
    };

    let train: Vec<ToySample> = (0..n_train).map(|_| draw_conforming(&mut rng)).collect();
    let n_conforming = n_test / 2;
    let mut test: Vec<ToySample> = (0..n_conforming).map(|_| draw_conforming(&mut rng)).collect();
    for _ in n_conforming..n_test {
        let r = sample_categorical(&mut rng, &rules.region_marginal);
        let o = rng.random_range(0..3);
        let s = rng.random_range(0..3);
        test.push(ToySample {
            region: r,
            object: o,
            speed: s,
            anomalous: !conforms(r, o, s),
        });
    }
    Ok(ToyData { train, test })
}

fn sample_categorical(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    #[test]
    fn street_conditionals_match_rule_table() {
        let rules = ToyRuleSet::street();
        let obj = rules.object_conditionals().unwrap();
        // walkway: persons only.
        assert_eq!(obj[0], [0.0, 1.0, 0.0]);
        // bicycle lane: cyclists only.
        assert_eq!(obj[1], [0.0, 0.0, 1.0]);
        // car lane: cars 0.8, leftover to cyclists.
        assert_abs_diff_eq!(obj[2][0], 0.8);
        assert_eq!(obj[2][1], 0.0);
        assert_abs_diff_eq!(obj[2][2], 0.2, epsilon = 1e-12);
        // park lane: persons 0.3, leftover to cars.
        assert_abs_diff_eq!(obj[3][0], 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(obj[3][1], 0.3);
        assert_eq!(obj[3][2], 0.0);

        let spd = rules.speed_conditionals().unwrap();
        // car: fast 0.8, slow forbidden, medium takes the rest.
        assert_abs_diff_eq!(spd[0][0], 0.8);
        assert_abs_diff_eq!(spd[0][1], 0.2, epsilon = 1e-12);
        assert_eq!(spd[0][2], 0.0);
        // person: slow 0.7, fast forbidden.
        assert_eq!(spd[1][0], 0.0);
        assert_abs_diff_eq!(spd[1][1], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(spd[1][2], 0.7);
        // cyclist: medium 0.9 and fast 0.1 pin the whole mass; slow is a
        // hint-exhausted zero.
        assert_abs_diff_eq!(spd[2][0], 0.1);
        assert_abs_diff_eq!(spd[2][1], 0.9);
        assert_eq!(spd[2][2], 0.0);
        for row in obj.iter().chain(spd.iter()) {
            assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn forbidden_pairs_never_appear_in_training() {
        let rules = ToyRuleSet::street();
        let data = generate_toy(&rules, 20_000, 0, 11).unwrap();
        assert!(!data.train.iter().any(|s| s.region == 0 && s.object == 0));
        assert!(!data.train.iter().any(|s| s.region == 1 && s.object == 0));
        assert!(!data.train.iter().any(|s| s.region == 2 && s.object == 1));
        assert!(!data.train.iter().any(|s| s.region == 3 && s.object == 2));
        assert!(!data.train.iter().any(|s| s.object == 0 && s.speed == 2));
        assert!(!data.train.iter().any(|s| s.object == 1 && s.speed == 0));
        assert!(data.train.iter().all(|s| !s.anomalous));
    }

    #[test]
    fn empty_splits() {
        let rules = ToyRuleSet::street();
        let data = generate_toy(&rules, 0, 0, 3).unwrap();
        assert!(data.train.is_empty());
        assert!(data.test.is_empty());
    }

    #[test]
    fn region_marginal_matches_defaults() {
        let rules = ToyRuleSet::street();
        let data = generate_toy(&rules, 100_000, 0, 5).unwrap();
        let mut counts = [0usize; 4];
        for s in &data.train {
            counts[s.region] += 1;
        }
        for c in counts {
            assert_abs_diff_eq!(c as f64 / 100_000.0, 0.25, epsilon = 0.01);
        }
    }

    #[test]
    fn labels_reproducible_from_rules() {
        let rules = ToyRuleSet::street();
        let obj = rules.object_conditionals().unwrap();
        let spd = rules.speed_conditionals().unwrap();
        let data = generate_toy(&rules, 0, 10_000, 7).unwrap();
        for s in &data.test {
            let conforming = obj[s.region][s.object] > 0.0 && spd[s.object][s.speed] > 0.0;
            assert_eq!(s.anomalous, !conforming);
        }
        // The uniform half must actually contain anomalies.
        let anomalous = data.test.iter().filter(|s| s.anomalous).count();
        assert!(anomalous > 2000, "only {anomalous} anomalies in uniform half");
        // And the conforming half none.
        assert!(data.test[..5000].iter().all(|s| !s.anomalous));
    }

    #[test]
    fn all_zero_row_is_rejected() {
        let mut rules = ToyRuleSet::street();
        // Forbid every object on the walkway.
        rules.region_object_zeros.push((0, 1));
        rules.region_object_zeros.push((0, 2));
        // The (walkway, person) hint now conflicts with its zero.
        let err = generate_toy(&rules, 10, 0, 0).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));

        let mut rules = ToyRuleSet::street();
        rules.region_object_hints.retain(|(r, _, _)| *r != 0);
        rules.region_object_zeros.push((0, 1));
        rules.region_object_zeros.push((0, 2));
        let err = generate_toy(&rules, 10, 0, 0).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn feature_is_concatenated_one_hot() {
        let s = ToySample {
            region: 2,
            object: 1,
            speed: 0,
            anomalous: false,
        };
        let f = s.feature();
        assert_eq!(f.len(), TOY_FEATURE_DIM);
        assert_eq!(f.sum(), 3.0);
        assert_eq!(f[2], 1.0);
        assert_eq!(f[5], 1.0);
        assert_eq!(f[7], 1.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let rules = ToyRuleSet::street();
        let a = generate_toy(&rules, 500, 500, 42).unwrap();
        let b = generate_toy(&rules, 500, 500, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_toy(&rules, 500, 500, 43).unwrap();
        assert_ne!(a, c);
    }
}
