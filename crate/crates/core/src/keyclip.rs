//! Keyframe detection on frame-difference signals and fixed-length key clip
//! windows around the detected keyframes.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyframeParams {
    /// Odd moving-average width.
    pub smooth_window: usize,
    /// Peaks must exceed `mean + threshold_k * std` of the smoothed signal.
    pub threshold_k: f64,
    pub max_keyframes: usize,
}

impl Default for KeyframeParams {
    fn default() -> Self {
        KeyframeParams {
            smooth_window: 5,
            threshold_k: 1.0,
            max_keyframes: 5,
        }
    }
}

/// Half-open frame window `[start, end)` of length `L` around a keyframe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyClipWindow {
    pub video_id: String,
    pub start: usize,
    pub end: usize,
    pub center: usize,
}

/// Mean absolute luminance change between consecutive frames.
pub fn luminance_diff_signal(frames: &[Array2<f64>]) -> Result<Vec<f64>> {
    if frames.len() < 2 {
        return Err(Error::InputTooShort(format!(
            "need at least 2 frames, got {}",
            frames.len()
        )));
    }
    let shape = frames[0].dim();
    if let Some((t, f)) = frames.iter().enumerate().find(|(_, f)| f.dim() != shape) {
        return Err(invalid!(
            "frame {t} has shape {:?}, expected {shape:?}",
            f.dim()
        ));
    }
    let pixels = (shape.0 * shape.1).max(1) as f64;
    Ok(frames
        .windows(2)
        .map(|w| {
            w[1].iter()
                .zip(w[0].iter())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / pixels
        })
        .collect())
}

/// Splits a `T x H x W` stack into frames.
pub fn frames_from_stack(stack: &Array3<f64>) -> Vec<Array2<f64>> {
    stack.axis_iter(Axis(0)).map(|f| f.to_owned()).collect()
}

/// Centered moving average; windows are truncated at the boundaries.
pub fn moving_average(signal: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = signal.len();
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(n - 1);
            signal[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Returns ascending indices of the strongest strict local maxima of the
/// smoothed signal that clear the `mean + k * std` threshold.
///
/// An endpoint counts as a local maximum when it is strictly above its one
/// neighbour. At most `max_keyframes` peaks are kept, largest first, with
/// ties going to the earlier index.
pub fn detect_keyframes(signal: &[f64], params: &KeyframeParams) -> Result<Vec<usize>> {
    let w = params.smooth_window;
    if w == 0 || w % 2 == 0 {
        return Err(Error::Config(format!("smooth window must be odd and >= 1, got {w}")));
    }
    if signal.is_empty() {
        return Ok(Vec::new());
    }
    let smooth = moving_average(signal, w);
    let n = smooth.len() as f64;
    let mean = smooth.iter().sum::<f64>() / n;
    let std = (smooth.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let threshold = mean + params.threshold_k * std;

    let mut peaks: Vec<usize> = (0..smooth.len())
        .filter(|&t| {
            let left = t == 0 || smooth[t] > smooth[t - 1];
            let right = t + 1 == smooth.len() || smooth[t] > smooth[t + 1];
            left && right && smooth.len() > 1 && smooth[t] > threshold
        })
        .collect();
    peaks.sort_by(|&a, &b| smooth[b].total_cmp(&smooth[a]).then(a.cmp(&b)));
    peaks.truncate(params.max_keyframes);
    peaks.sort_unstable();
    Ok(peaks)
}

/// Fixed-length windows centered on keyframes, shifted to fit `[0, T)`.
pub fn extract_key_clips(
    keyframes: &[usize],
    clip_len: usize,
    num_frames: usize,
    video_id: &str,
) -> Result<Vec<KeyClipWindow>> {
    if clip_len == 0 {
        return Err(Error::Config("clip length must be >= 1".into()));
    }
    if clip_len > num_frames {
        return Err(Error::InputTooShort(format!(
            "video {video_id} has {num_frames} frames, clip length is {clip_len}"
        )));
    }
    let mut out: Vec<KeyClipWindow> = Vec::with_capacity(keyframes.len());
    for &c in keyframes {
        if c >= num_frames {
            return Err(invalid!("keyframe {c} outside video {video_id} of {num_frames} frames"));
        }
        let start = c.saturating_sub(clip_len / 2).min(num_frames - clip_len);
        let window = KeyClipWindow {
            video_id: video_id.to_string(),
            start,
            end: start + clip_len,
            center: c,
        };
        if !out.iter().any(|w| w.start == window.start) {
            out.push(window);
        }
    }
    Ok(out)
}

/// Key clips detected for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoKeyClips {
    pub video_id: String,
    pub num_frames: usize,
    /// Keyframe frame indices (a diff-signal peak at `t` marks frame `t + 1`).
    pub keyframes: Vec<usize>,
    pub windows: Vec<KeyClipWindow>,
}

/// Output document of the key clip stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyClipsFile {
    pub clip_length: usize,
    pub params: KeyframeParams,
    pub videos: Vec<VideoKeyClips>,
}

impl KeyClipsFile {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        crate::pipeline::write_json(path, self)
    }

    pub fn video(&self, id: &str) -> Option<&VideoKeyClips> {
        self.videos.iter().find(|v| v.video_id == id)
    }
}

/// Runs diff signal, keyframe detection and window extraction for one stack.
pub fn video_key_clips(
    stack: &Array3<f64>,
    clip_len: usize,
    params: &KeyframeParams,
    video_id: &str,
) -> Result<VideoKeyClips> {
    let frames = frames_from_stack(stack);
    let signal = luminance_diff_signal(&frames)?;
    let keyframes: Vec<usize> = detect_keyframes(&signal, params)?
        .into_iter()
        .map(|t| t + 1)
        .collect();
    let windows = extract_key_clips(&keyframes, clip_len, frames.len(), video_id)?;
    Ok(VideoKeyClips {
        video_id: video_id.to_string(),
        num_frames: frames.len(),
        keyframes,
        windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(w: usize, k: f64, s: usize) -> KeyframeParams {
        KeyframeParams {
            smooth_window: w,
            threshold_k: k,
            max_keyframes: s,
        }
    }

    #[test]
    fn identical_frames_give_zero() {
        let f = Array2::from_elem((3, 4), 0.3);
        assert_eq!(luminance_diff_signal(&[f.clone(), f]).unwrap(), vec![0.0]);
    }

    #[test]
    fn full_range_step() {
        let a = Array2::zeros((2, 2));
        let b = Array2::ones((2, 2));
        assert_eq!(luminance_diff_signal(&[a, b]).unwrap(), vec![1.0]);
    }

    #[test]
    fn diff_signal_errors() {
        let a = Array2::<f64>::zeros((2, 2));
        assert!(matches!(luminance_diff_signal(&[a.clone()]), Err(Error::InputTooShort(_))));
        let b = Array2::<f64>::zeros((3, 2));
        assert!(matches!(luminance_diff_signal(&[a, b]), Err(Error::Validation(_))));
    }

    #[test]
    fn diff_signal_matches_per_pixel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let frames: Vec<Array2<f64>> = (0..20)
            .map(|_| Array2::from_shape_fn((5, 6), |_| rng.random::<f64>()))
            .collect();
        let got = luminance_diff_signal(&frames).unwrap();
        for t in 0..19 {
            let mut acc = 0.0;
            for r in 0..5 {
                for c in 0..6 {
                    acc += (frames[t + 1][[r, c]] - frames[t][[r, c]]).abs();
                }
            }
            assert!((got[t] - acc / 30.0).abs() < 1e-6);
        }
    }

    #[test]
    fn adding_a_constant_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames: Vec<Array2<f64>> = (0..30)
            .map(|_| Array2::from_shape_fn((4, 4), |_| rng.random::<f64>()))
            .collect();
        let shifted: Vec<_> = frames.iter().map(|f| f + 17.0).collect();
        let a = luminance_diff_signal(&frames).unwrap();
        let b = luminance_diff_signal(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
        let p = params(3, 0.5, 4);
        assert_eq!(detect_keyframes(&a, &p).unwrap(), detect_keyframes(&b, &p).unwrap());
    }

    #[test]
    fn planted_isolated_peaks() {
        let sig = [0.0, 0.0, 5.0, 0.0, 0.0, 5.0, 0.0];
        assert_eq!(detect_keyframes(&sig, &params(1, 1.0, 5)).unwrap(), vec![2, 5]);
    }

    #[test]
    fn constant_signal_has_no_peaks() {
        assert!(detect_keyframes(&[2.0; 10], &params(5, 1.0, 5)).unwrap().is_empty());
    }

    #[test]
    fn even_window_rejected() {
        assert!(detect_keyframes(&[1.0], &params(4, 1.0, 5)).is_err());
    }

    fn peak_oracle(signal: &[f64], p: &KeyframeParams) -> Vec<usize> {
        let n = signal.len();
        let h = p.smooth_window as isize / 2;
        let mut smooth = vec![0.0; n];
        for (t, out) in smooth.iter_mut().enumerate() {
            let (mut sum, mut cnt) = (0.0, 0.0);
            for d in -h..=h {
                let u = t as isize + d;
                if u >= 0 && (u as usize) < n {
                    sum += signal[u as usize];
                    cnt += 1.0;
                }
            }
            *out = sum / cnt;
        }
        let mean: f64 = smooth.iter().sum::<f64>() / n as f64;
        let var: f64 = smooth.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let thr = mean + p.threshold_k * var.sqrt();
        let mut cand = Vec::new();
        for t in 0..n {
            let l = if t == 0 { f64::NEG_INFINITY } else { smooth[t - 1] };
            let r = if t == n - 1 { f64::NEG_INFINITY } else { smooth[t + 1] };
            if smooth[t] > l && smooth[t] > r && smooth[t] > thr {
                cand.push(t);
            }
        }
        // selection by repeated argmax
        let mut chosen = Vec::new();
        while chosen.len() < p.max_keyframes && !cand.is_empty() {
            let mut best = 0;
            for i in 1..cand.len() {
                if smooth[cand[i]] > smooth[cand[best]] {
                    best = i;
                }
            }
            chosen.push(cand.remove(best));
        }
        chosen.sort();
        chosen
    }

    #[test]
    fn random_signals_match_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let sig: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
            let p = params([1, 3, 5, 7][trial % 4], [0.0, 0.5, 1.0][trial % 3], 1 + trial % 9);
            let got = detect_keyframes(&sig, &p).unwrap();
            assert_eq!(got, peak_oracle(&sig, &p), "trial {trial}");
        }
    }

    #[test]
    fn window_arithmetic() {
        let w = extract_key_clips(&[50, 3, 95], 16, 100, "v").unwrap();
        assert_eq!((w[0].start, w[0].end), (42, 58));
        assert_eq!((w[1].start, w[1].end), (0, 16));
        assert_eq!((w[2].start, w[2].end), (84, 100));
    }

    #[test]
    fn clamped_duplicates_removed() {
        let w = extract_key_clips(&[1, 2, 50], 16, 100, "v").unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].center, 1);
    }

    #[test]
    fn clip_longer_than_video() {
        assert!(matches!(
            extract_key_clips(&[1], 16, 10, "v"),
            Err(Error::InputTooShort(_))
        ));
    }

    #[test]
    fn windows_always_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let t = rng.random_range(1..200usize);
            let l = rng.random_range(1..=t);
            let kf: Vec<usize> = (0..5).map(|_| rng.random_range(0..t)).collect();
            for w in extract_key_clips(&kf, l, t, "v").unwrap() {
                assert_eq!(w.end - w.start, l);
                assert!(w.end <= t);
            }
        }
    }
}
