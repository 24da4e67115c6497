//! Ablation operators on masks, initializations and score rankings.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{InitScheme, Mask, MaskedNetwork};
use crate::pruning::{remove, Direction, Method, Ranking, ScoreSet};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AblationKind {
    None,
    Shuffle,
    Reinit,
    Invert,
    GraspLowestAbs,
    GraspHighestAbs,
    FixedVarianceInit,
}

impl AblationKind {
    pub const ALL: [AblationKind; 7] = [
        AblationKind::None,
        AblationKind::Shuffle,
        AblationKind::Reinit,
        AblationKind::Invert,
        AblationKind::GraspLowestAbs,
        AblationKind::GraspHighestAbs,
        AblationKind::FixedVarianceInit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationKind::None => "none",
            AblationKind::Shuffle => "shuffle",
            AblationKind::Reinit => "reinit",
            AblationKind::Invert => "invert",
            AblationKind::GraspLowestAbs => "grasp_lowest_abs",
            AblationKind::GraspHighestAbs => "grasp_highest_abs",
            AblationKind::FixedVarianceInit => "fixed_variance_init",
        }
    }

    /// The ranking used when scores are turned into masks.
    pub fn ranking(self) -> Ranking {
        match self {
            AblationKind::Invert => Ranking::Inverted,
            AblationKind::GraspLowestAbs => Ranking::LowestAbs,
            AblationKind::GraspHighestAbs => Ranking::HighestAbs,
            _ => Ranking::Standard,
        }
    }

    /// True for the kinds that act on a pruned network rather than on scoring.
    pub fn acts_after_pruning(self) -> bool {
        matches!(self, AblationKind::Shuffle | AblationKind::Reinit)
    }

    /// Rejects combinations that have no meaning, such as a GraSP variant on
    /// another method.
    pub fn check_method(self, method: Method) -> Result<()> {
        match self {
            AblationKind::GraspLowestAbs | AblationKind::GraspHighestAbs if method != Method::Grasp => {
                Err(Error::Config(format!("ablation {self} applies to grasp only, not {method}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}

/// Permutes the entries of every mask uniformly at random, layer by layer.
pub fn shuffle_masks(masks: &[Mask], seed: u64) -> Vec<Mask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    masks
        .iter()
        .map(|m| {
            let mut bits = m.bits().to_vec();
            bits.shuffle(&mut rng);
            Mask::from_bits(m.rows(), m.cols(), bits).expect("same shape")
        })
        .collect()
}

/// Removes the end of the ranking opposite to the method's own.
pub fn invert(scores: &ScoreSet, s: f64) -> Result<Vec<Mask>> {
    remove(scores, s, scores.method().standard_direction().opposite())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbsEnd {
    LowestAbs,
    HighestAbs,
}

/// Ranks GraSP scores by `|z|` and removes the requested end.
pub fn grasp_abs_variant(scores: &ScoreSet, s: f64, which: AbsEnd) -> Result<Vec<Mask>> {
    if scores.method() != Method::Grasp {
        return Err(Error::Config(format!("magnitude variants need grasp scores, got {}", scores.method())));
    }
    let direction = match which {
        AbsEnd::LowestAbs => Direction::Lowest,
        AbsEnd::HighestAbs => Direction::Highest,
    };
    remove(&scores.map(f64::abs), s, direction)
}

/// Applies a post-pruning ablation. `scheme` is the distribution the network
/// was drawn from and is used by `reinit`.
pub fn apply_ablation<T: Scalar>(net: &MaskedNetwork<T>, kind: AblationKind, scheme: InitScheme, seed: u64) -> Result<MaskedNetwork<T>> {
    match kind {
        AblationKind::None => Ok(net.clone()),
        AblationKind::Shuffle => {
            let mut out = net.clone();
            out.set_masks(shuffle_masks(net.masks(), seed))?;
            Ok(out)
        }
        AblationKind::Reinit => net.reinitialize(scheme, seed),
        other => Err(Error::Config(format!("ablation {other} acts during scoring, not on a pruned network"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LayerSpec;

    fn one_layer(method: Method, z: Vec<f64>) -> ScoreSet {
        ScoreSet::dense(method, vec![(1, z.len(), z)]).unwrap()
    }

    fn bits(m: &Mask) -> Vec<u8> {
        m.bits().iter().map(|&b| b as u8).collect()
    }

    #[test]
    fn names_round_trip() {
        for k in AblationKind::ALL {
            assert_eq!(k.as_str().parse::<AblationKind>().unwrap(), k);
        }
        assert!("flip".parse::<AblationKind>().is_err());
    }

    #[test]
    fn inverted_magnitude() {
        let z = one_layer(Method::Magnitude, vec![3.0, 1.0, 2.0, 4.0]);
        assert_eq!(bits(&invert(&z, 0.5).unwrap()[0]), vec![0, 1, 1, 0]);
        let standard = remove(&z, 0.5, Direction::Lowest).unwrap();
        let inv = invert(&z, 0.5).unwrap();
        assert!(standard[0].bits().iter().zip(inv[0].bits()).all(|(a, b)| a != b));
    }

    #[test]
    fn grasp_inversion_prunes_lowest() {
        let z = one_layer(Method::Grasp, vec![0.3, -1.0, 2.0, 0.1]);
        assert_eq!(invert(&z, 0.5).unwrap(), remove(&z, 0.5, Direction::Lowest).unwrap());
    }

    #[test]
    fn grasp_abs_examples() {
        let z = one_layer(Method::Grasp, vec![-4.0, 1.0, -2.0]);
        assert_eq!(bits(&grasp_abs_variant(&z, 1.0 / 3.0, AbsEnd::LowestAbs).unwrap()[0]), vec![1, 0, 1]);
        assert_eq!(bits(&grasp_abs_variant(&z, 1.0 / 3.0, AbsEnd::HighestAbs).unwrap()[0]), vec![0, 1, 1]);
        let z = one_layer(Method::Grasp, vec![-4.0, 1.0, -2.0, 3.0]);
        let lo = grasp_abs_variant(&z, 0.5, AbsEnd::LowestAbs).unwrap();
        let hi = grasp_abs_variant(&z, 0.5, AbsEnd::HighestAbs).unwrap();
        assert!(lo[0].bits().iter().zip(hi[0].bits()).all(|(a, b)| a != b));
        let snip = one_layer(Method::Snip, vec![1.0, 2.0]);
        assert!(grasp_abs_variant(&snip, 0.5, AbsEnd::LowestAbs).is_err());
    }

    #[test]
    fn shuffle_keeps_counts() {
        let m = Mask::from_bits(1, 4, vec![true, true, false, false]).unwrap();
        let out = shuffle_masks(std::slice::from_ref(&m), 9);
        assert_eq!(out[0].pruned(), 2);
        assert_eq!(out, shuffle_masks(std::slice::from_ref(&m), 9));
    }

    #[test]
    fn apply_kinds() {
        let mut net = MaskedNetwork::<f64>::initialize(&LayerSpec::mlp(&[6, 5, 3]), InitScheme::default(), 2).unwrap();
        let z = crate::pruning::score_magnitude(&net).unwrap();
        net.set_masks(remove(&z, 0.6, Direction::Lowest).unwrap()).unwrap();
        let scheme = InitScheme::default();
        assert_eq!(apply_ablation(&net, AblationKind::None, scheme, 1).unwrap(), net);
        let re = apply_ablation(&net, AblationKind::Reinit, scheme, 1).unwrap();
        assert_eq!(re.masks(), net.masks());
        assert_ne!(re.weights(), net.weights());
        let sh = apply_ablation(&net, AblationKind::Shuffle, scheme, 1).unwrap();
        assert_eq!(sh.layerwise_sparsity(), net.layerwise_sparsity());
        assert_eq!(sh.weights(), net.weights());
        assert!(apply_ablation(&net, AblationKind::Invert, scheme, 1).is_err());
    }

    #[test]
    fn grasp_kinds_need_grasp() {
        assert!(AblationKind::GraspLowestAbs.check_method(Method::Snip).is_err());
        assert!(AblationKind::GraspLowestAbs.check_method(Method::Grasp).is_ok());
        assert!(AblationKind::Shuffle.check_method(Method::Synflow).is_ok());
    }
}
