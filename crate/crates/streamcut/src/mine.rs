//! Pair mining: turning a stream with a known changepoint into labeled and
//! unlabeled training pairs.
//!
//! Same-side pairs (both frames pre-change or both post-change) are labeled
//! with the reserved "no change" caption. Straddling pairs carry the stream's
//! change captions when the stream is annotated, one labeled pair per
//! caption; for unannotated streams they become unlabeled pairs. Every frame
//! pair of the stream lands in exactly one of the two lists.

use thiserror::Error;

use crate::model::{all_pairs, CaptionTokens, PairKey, StreamManifest};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MineError {
    #[error("stream '{0}' has no changepoint")]
    MissingChangepoint(String),
    #[error("stream '{0}' has no captions")]
    MissingCaption(String),
}

/// A frame pair with the caption it was mined under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPair {
    pub key: PairKey,
    pub caption: CaptionTokens,
}

/// Mined training pairs of one stream. `labeled` and `unlabeled` are sorted
/// by pair key and together cover the full upper triangle.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MinedPairs {
    pub labeled: Vec<LabeledPair>,
    pub unlabeled: Vec<PairKey>,
}

impl MinedPairs {
    /// Distinct pair keys appearing in the labeled list.
    pub fn labeled_keys(&self) -> Vec<PairKey> {
        let mut keys: Vec<PairKey> = self.labeled.iter().map(|lp| lp.key).collect();
        keys.dedup();
        keys
    }
}

/// Mines an annotated stream: straddling pairs get every change caption,
/// same-side pairs get "no change".
pub fn mine_annotated(manifest: &StreamManifest) -> Result<MinedPairs, MineError> {
    let kappa = manifest
        .true_changepoint
        .ok_or_else(|| MineError::MissingChangepoint(manifest.stream_id.clone()))?;
    if manifest.captions.is_empty() {
        return Err(MineError::MissingCaption(manifest.stream_id.clone()));
    }
    let mut labeled = Vec::new();
    for key in all_pairs(manifest.num_frames) {
        if key.straddles(kappa) {
            for caption in &manifest.captions {
                labeled.push(LabeledPair { key, caption: caption.clone() });
            }
        } else {
            labeled.push(LabeledPair { key, caption: CaptionTokens::no_change() });
        }
    }
    Ok(MinedPairs { labeled, unlabeled: Vec::new() })
}

/// Mines a stream with a known changepoint but no captions: same-side pairs
/// still yield "no change" labels, straddling pairs become unlabeled.
pub fn mine_unannotated(manifest: &StreamManifest) -> Result<MinedPairs, MineError> {
    let kappa = manifest
        .true_changepoint
        .ok_or_else(|| MineError::MissingChangepoint(manifest.stream_id.clone()))?;
    let mut mined = MinedPairs::default();
    for key in all_pairs(manifest.num_frames) {
        if key.straddles(kappa) {
            mined.unlabeled.push(key);
        } else {
            mined.labeled.push(LabeledPair { key, caption: CaptionTokens::no_change() });
        }
    }
    Ok(mined)
}

/// Mines a no-change stream: every pair is labeled "no change".
pub fn mine_no_change(manifest: &StreamManifest) -> MinedPairs {
    MinedPairs {
        labeled: all_pairs(manifest.num_frames)
            .map(|key| LabeledPair { key, caption: CaptionTokens::no_change() })
            .collect(),
        unlabeled: Vec::new(),
    }
}

/// Dispatches on the manifest contents: annotated, unannotated, or no-change.
pub fn mine(manifest: &StreamManifest) -> Result<MinedPairs, MineError> {
    match (manifest.true_changepoint, manifest.captions.is_empty()) {
        (Some(_), false) => mine_annotated(manifest),
        (Some(_), true) => mine_unannotated(manifest),
        (None, _) => Ok(mine_no_change(manifest)),
    }
}

/// The time-reversed view of a stream, for augmentation: frame `i` becomes
/// `N-1-i`, so a changepoint at `kappa` moves to `N - kappa`.
pub fn reversed(manifest: &StreamManifest) -> StreamManifest {
    StreamManifest {
        stream_id: manifest.stream_id.clone(),
        num_frames: manifest.num_frames,
        true_changepoint: manifest.true_changepoint.map(|k| manifest.num_frames - k),
        captions: manifest.captions.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::pair_count;

    fn caption(tokens: &[u32]) -> CaptionTokens {
        CaptionTokens::new(tokens.to_vec()).unwrap()
    }

    fn manifest(n: u32, kappa: Option<u32>, captions: Vec<CaptionTokens>) -> StreamManifest {
        StreamManifest::new("s", n, kappa, captions).unwrap()
    }

    fn keys(pairs: &[(u32, u32)]) -> Vec<PairKey> {
        pairs.iter().map(|&(t, tp)| PairKey::new(t, tp).unwrap()).collect()
    }

    #[test]
    fn five_frame_annotated_stream_mines_four_no_change_and_six_change_pairs() {
        // five frames 0..4 with the change arriving at frame 3
        let w = caption(&[7, 3]);
        let mined = mine_annotated(&manifest(5, Some(3), vec![w.clone()])).unwrap();
        let no_change: Vec<PairKey> = mined
            .labeled
            .iter()
            .filter(|lp| lp.caption.is_no_change())
            .map(|lp| lp.key)
            .collect();
        let with_w: Vec<PairKey> =
            mined.labeled.iter().filter(|lp| lp.caption == w).map(|lp| lp.key).collect();
        assert_eq!(no_change, keys(&[(0, 1), (0, 2), (1, 2), (3, 4)]));
        assert_eq!(with_w, keys(&[(0, 3), (0, 4), (1, 3), (1, 4), (2, 3), (2, 4)]));
        assert!(mined.unlabeled.is_empty());
    }

    #[test]
    fn two_frame_annotated_stream() {
        let mined = mine_annotated(&manifest(2, Some(1), vec![caption(&[5])])).unwrap();
        assert_eq!(mined.labeled.len(), 1);
        assert!(!mined.labeled[0].caption.is_no_change());
    }

    #[test]
    fn count_formulas_hold() {
        let mined = mine_annotated(&manifest(10, Some(5), vec![caption(&[1])])).unwrap();
        let straddling = mined.labeled.iter().filter(|lp| !lp.caption.is_no_change()).count();
        let no_change = mined.labeled.iter().filter(|lp| lp.caption.is_no_change()).count();
        assert_eq!(straddling, 25);
        assert_eq!(no_change, 10 + 10);
    }

    #[test]
    fn unannotated_stream_sends_straddling_pairs_to_unlabeled() {
        let mined = mine_unannotated(&manifest(5, Some(3), vec![])).unwrap();
        assert_eq!(mined.labeled.len(), 4);
        assert_eq!(mined.unlabeled.len(), 6);
        assert!(mined.labeled.iter().all(|lp| lp.caption.is_no_change()));

        let mined = mine_unannotated(&manifest(2, Some(1), vec![])).unwrap();
        assert_eq!(mined.labeled.len(), 0);
        assert_eq!(mined.unlabeled.len(), 1);

        let mined = mine_unannotated(&manifest(10, Some(8), vec![])).unwrap();
        assert_eq!(mined.unlabeled.len(), 16);
        assert_eq!(mined.labeled.len(), 28 + 1);
    }

    #[test]
    fn no_change_stream_labels_every_pair() {
        for n in [2u32, 3, 10] {
            let mined = mine_no_change(&manifest(n, None, vec![]));
            assert_eq!(mined.labeled.len(), pair_count(n));
            assert!(mined.labeled.iter().all(|lp| lp.caption.is_no_change()));
        }
    }

    #[test]
    fn mining_errors() {
        assert_eq!(
            mine_annotated(&manifest(5, None, vec![caption(&[1])])).unwrap_err(),
            MineError::MissingChangepoint("s".into())
        );
        assert_eq!(
            mine_annotated(&manifest(5, Some(2), vec![])).unwrap_err(),
            MineError::MissingCaption("s".into())
        );
        assert_eq!(
            mine_unannotated(&manifest(5, None, vec![])).unwrap_err(),
            MineError::MissingChangepoint("s".into())
        );
    }

    #[test]
    fn labeled_and_unlabeled_partition_the_triangle() {
        for n in 2u32..=12 {
            for kappa in 1..n {
                let m = manifest(n, Some(kappa), vec![]);
                let mined = mine(&m).unwrap();
                let mut all: Vec<PairKey> = mined.labeled_keys();
                all.extend(&mined.unlabeled);
                all.sort();
                let expected: Vec<PairKey> = all_pairs(n).collect();
                assert_eq!(all, expected);
                let straddling = mined.unlabeled.len();
                assert_eq!(straddling, (kappa * (n - kappa)) as usize);
            }
        }
    }

    #[test]
    fn straddling_pairs_never_carry_no_change() {
        for kappa in 1..5u32 {
            let m = manifest(5, Some(kappa), vec![caption(&[9])]);
            let mined = mine(&m).unwrap();
            for lp in &mined.labeled {
                if lp.key.straddles(kappa) {
                    assert!(!lp.caption.is_no_change());
                }
            }
        }
    }

    #[test]
    fn multiple_captions_replicate_straddling_pairs() {
        let m = manifest(3, Some(1), vec![caption(&[1]), caption(&[2, 3])]);
        let mined = mine(&m).unwrap();
        // 2 straddling pairs x 2 captions + 1 same-side pair
        assert_eq!(mined.labeled.len(), 5);
        assert_eq!(mined.labeled_keys().len(), 3);
    }

    #[test]
    fn reversal_moves_the_changepoint() {
        let m = manifest(10, Some(3), vec![caption(&[1])]);
        let r = reversed(&m);
        assert_eq!(r.true_changepoint, Some(7));
        // mined counts are mirrored
        let a = mine(&m).unwrap();
        let b = mine(&r).unwrap();
        assert_eq!(a.labeled.len(), b.labeled.len());
        let r2 = reversed(&r);
        assert_eq!(r2.true_changepoint, m.true_changepoint);
    }
}
