use rand::Rng as _;

use super::{Sample, StereoImagePair};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Flip {
    pub horizontal: bool,
    pub vertical: bool,
}

/// Apply `flip` to both views and both resolutions of `sample`.
///
/// A horizontal mirror turns the left camera into the right one, so the
/// views are exchanged as well as mirrored; this keeps disparities pointing
/// the same way.
pub fn apply_flip(sample: &Sample, flip: Flip) -> Sample {
    let f = |pair: &StereoImagePair| {
        let (mut l, mut r) = if flip.horizontal {
            (pair.right.flip_horizontal(), pair.left.flip_horizontal())
        } else {
            (pair.left.clone(), pair.right.clone())
        };
        if flip.vertical {
            l = l.flip_vertical();
            r = r.flip_vertical();
        }
        StereoImagePair {
            left: l,
            right: r,
            id: pair.id.clone(),
        }
    };
    Sample {
        lq: f(&sample.lq),
        hq: f(&sample.hq),
    }
}

/// Random horizontal/vertical flips, each with probability 1/2.
pub fn augment_flip(sample: &Sample, rng: &mut Rng) -> Sample {
    let flip = Flip {
        horizontal: rng.gen_bool(0.5),
        vertical: rng.gen_bool(0.5),
    };
    apply_flip(sample, flip)
}
