//! Dataset manifests, WAV I/O, the synthetic corpus, pipeline configuration
//! and cache helpers.

pub mod config;
pub mod manifest;
pub mod store;
pub mod synth;
pub mod wav;

pub use config::PipelineConfig;
pub use manifest::{Manifest, ManifestEntry, MANIFEST_HEADER};
pub use synth::{synth_dataset, synth_recording, write_corpus, SynthConfig};
pub use wav::{decode_wav, write_wav_f32, write_wav_i16};

use crate::audio::{minmax_normalize, remove_silence, segment, AudioClip, SilenceConfig};
use crate::error::Result;
use crate::features::mel_spectrogram;
use crate::hierarchy::Segment;

/// Silence removal, min-max normalization and sliding-window segmentation
/// of one recording.
pub fn preprocess_clip(clip: &AudioClip, silence: &SilenceConfig, window_s: f64, hop_s: f64) -> Result<Vec<AudioClip>> {
    let voiced = remove_silence(clip, silence)?;
    let norm = minmax_normalize(&voiced)?;
    let segs = segment(&norm, window_s, hop_s);
    if segs.is_empty() {
        log::warn!(
            "{}: {:.3} s after silence removal, shorter than one segment; dropped",
            clip.recording_id,
            norm.duration_s()
        );
    }
    Ok(segs)
}

/// Preprocesses and featurizes every recording, in input order.
pub fn build_segments(clips: &[AudioClip], cfg: &PipelineConfig) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    for clip in clips {
        for seg in preprocess_clip(clip, &cfg.silence, cfg.segment_window_s, cfg.segment_hop_s)? {
            let spec = mel_spectrogram(&seg)?;
            out.push(Segment { clip: seg, spec });
        }
    }
    Ok(out)
}
