//! Flat dotted-key configuration (`vad.silence_ms = 500`), applied on top
//! of a named scenario. An empty file leaves the scenario untouched.

use std::path::Path;

use toml::Value;

use crate::bench::Scenario;
use crate::error::{Error, Result};
use crate::media::LanguageCode;
use crate::orchestrator::DriftMode;
use crate::pipeline::StageProfile;
use crate::segmenter::SegmenterMode;
use crate::visual::LipsyncEngine;

/// Parsed `key -> value` pairs in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlatConfig {
    pub entries: Vec<(String, Value)>,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut entries = Vec::new();
        flatten("", &table, &mut entries);
        Ok(FlatConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    /// Apply every entry to `scn`; unknown keys and mistyped values are errors.
    pub fn apply(&self, scn: &mut Scenario) -> Result<()> {
        for (k, v) in &self.entries {
            apply_key(scn, k, v)?;
        }
        scn.validate()
    }
}

fn bad(key: &str, v: &Value, want: &str) -> Error {
    Error::Config(format!("{key}: expected {want}, got `{v}`"))
}

fn float(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(bad(key, v, "a number")),
    }
}

fn uint(key: &str, v: &Value) -> Result<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(bad(key, v, "a non-negative integer")),
    }
}

fn string<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| bad(key, v, "a string"))
}

fn profile(p: &mut StageProfile, field: &str, key: &str, v: &Value) -> Result<()> {
    match field {
        "fixed_ms" => p.fixed_ms = float(key, v)?,
        "per_sec_ms" => p.per_sec_ms = float(key, v)?,
        "jitter_pct" => p.jitter_pct = float(key, v)?,
        _ => return Err(Error::Config(format!("unknown key `{key}`"))),
    }
    Ok(())
}

fn apply_key(scn: &mut Scenario, key: &str, v: &Value) -> Result<()> {
    let (head, field) = key.split_once('.').unwrap_or((key, ""));
    match (head, field) {
        ("stt", f) => profile(&mut scn.stt, f, key, v)?,
        ("mt", f) => profile(&mut scn.mt, f, key, v)?,
        ("tts", f) => profile(&mut scn.tts, f, key, v)?,
        ("lipsync", f) => profile(&mut scn.lipsync, f, key, v)?,

        ("seed", "") => scn.seed = uint(key, v)?,
        ("repetitions", "") => scn.repetitions = uint(key, v)? as u32,
        ("mode", "") => scn.mode = string(key, v)?.parse()?,
        ("clip_lengths_s", "") => {
            let arr = v.as_array().ok_or_else(|| bad(key, v, "an array of numbers"))?;
            scn.clip_lengths_s = arr.iter().map(|x| float(key, x)).collect::<Result<_>>()?;
        }
        ("fps", "") => {
            scn.fps = uint(key, v)? as u32;
            scn.sync.fps = scn.fps;
        }
        ("sample_rate", "") => scn.sample_rate = uint(key, v)? as u32,
        ("prefetch", "") => scn.prefetch = uint(key, v)? as usize,
        ("tts_ratio", "") => scn.tts_ratio = float(key, v)?,
        ("face_detect_ms", "") => scn.face_detect_ms = float(key, v)?,
        ("baseline_setup_ms", "") => scn.baseline_setup_ms = uint(key, v)?,

        ("engine", "baseline") => scn.baseline_engine = LipsyncEngine::by_name(string(key, v)?)?,
        ("engine", "pipeline") => scn.pipeline_engine = LipsyncEngine::by_name(string(key, v)?)?,

        ("pattern", "lead_ms") => scn.pattern.lead_ms = uint(key, v)?,
        ("pattern", "speech_ms") => scn.pattern.speech_ms = uint(key, v)?,
        ("pattern", "trail_ms") => scn.pattern.trail_ms = uint(key, v)?,

        ("vad", "silence_ms") => scn.segmenter.vad.silence_ms = uint(key, v)?,
        ("vad", "energy_floor_db") => scn.segmenter.vad.energy_floor_db = float(key, v)?,
        ("vad", "min_segment_ms") => scn.segmenter.vad.min_segment_ms = uint(key, v)?,
        // 0 disables the forced split
        ("vad", "max_segment_ms") => scn.segmenter.vad.max_segment_ms = Some(uint(key, v)?).filter(|m| *m > 0),
        ("vad", "frame_ms") => scn.segmenter.vad.frame_ms = uint(key, v)?,

        ("segmenter", "mode") => {
            scn.segmenter.mode = match string(key, v)? {
                "semantic" => SegmenterMode::Semantic,
                "baseline" => SegmenterMode::Baseline,
                _ => return Err(bad(key, v, "`semantic` or `baseline`")),
            }
        }
        ("segmenter", "boundary_threshold") => scn.segmenter.boundary_threshold = float(key, v)?,
        ("segmenter", "scorer_latency_ms") => scn.segmenter.scorer_latency_ms = uint(key, v)?,
        ("segmenter", "lang_src") => scn.segmenter.lang_src = LanguageCode::new(string(key, v)?),
        ("segmenter", "lang_dst") => scn.segmenter.lang_dst = LanguageCode::new(string(key, v)?),

        ("sync", f) => {
            let s = &mut scn.sync;
            match f {
                "window_ms" => s.window_ms = uint(key, v)?,
                "drift_limit_ms" => s.drift_limit_ms = uint(key, v)?,
                "drift_mode" => {
                    s.drift_mode = match string(key, v)? {
                        "raw" => DriftMode::Raw,
                        "ewma" => DriftMode::Ewma,
                        _ => return Err(bad(key, v, "`raw` or `ewma`")),
                    }
                }
                "ewma_alpha" => s.ewma_alpha = float(key, v)?,
                "frame_buffer_bytes" => s.frame_buffer_bytes = uint(key, v)?,
                "audio_buffer_bytes" => s.audio_buffer_bytes = uint(key, v)?,
                "retry_attempts" => s.retry_attempts = uint(key, v)? as u32,
                "retry_base_ms" => s.retry_base_ms = uint(key, v)?,
                "retry_factor" => s.retry_factor = float(key, v)?,
                "min_frames" => s.min_frames = uint(key, v)? as usize,
                "gather_ms" => s.gather_ms = uint(key, v)?,
                "align_ms" => s.align_ms = uint(key, v)?,
                "mel_ms" => s.mel_ms = uint(key, v)?,
                "emit_ms" => s.emit_ms = uint(key, v)?,
                _ => return Err(Error::Config(format!("unknown key `{key}`"))),
            }
        }
        _ => return Err(Error::Config(format!("unknown key `{key}`"))),
    }
    Ok(())
}

/// Named scenario with the config file (if any) applied.
pub fn load_scenario(name: &str, config: Option<&Path>) -> Result<Scenario> {
    let mut scn = Scenario::by_name(name)?;
    if let Some(p) = config {
        FlatConfig::load(p)?.apply(&mut scn)?;
    }
    Ok(scn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::BenchMode;

    #[test]
    fn empty_config_is_identity() {
        let mut s = Scenario::paper_table3();
        FlatConfig::parse("").unwrap().apply(&mut s).unwrap();
        assert_eq!(format!("{s:?}"), format!("{:?}", Scenario::paper_table3()));
    }

    #[test]
    fn dotted_and_table_forms_agree() {
        let a = FlatConfig::parse("vad.silence_ms = 700\nsync.window_ms = 40\n").unwrap();
        let b = FlatConfig::parse("[vad]\nsilence_ms = 700\n[sync]\nwindow_ms = 40\n").unwrap();
        assert_eq!(a, b);
        let mut s = Scenario::paper_table3();
        a.apply(&mut s).unwrap();
        assert_eq!((s.segmenter.vad.silence_ms, s.sync.window_ms), (700, 40));
    }

    #[test]
    fn rejects_unknown_and_mistyped() {
        let mut s = Scenario::paper_table3();
        assert!(FlatConfig::parse("vad.nope = 1").unwrap().apply(&mut s).is_err());
        assert!(FlatConfig::parse("vad.silence_ms = \"x\"").unwrap().apply(&mut s).is_err());
        assert!(FlatConfig::parse("stt.per_sec_ms = -").is_err());
    }

    #[test]
    fn profiles_modes_and_engines() {
        let cfg = FlatConfig::parse(
            "mode = \"baseline\"\nstt.per_sec_ms = 500\nengine.pipeline = \"wav2lip_fp32\"\nvad.max_segment_ms = 0\nclip_lengths_s = [2, 4.5]\n",
        )
        .unwrap();
        let mut s = Scenario::paper_table3();
        cfg.apply(&mut s).unwrap();
        assert_eq!(s.mode, BenchMode::Baseline);
        assert_eq!(s.stt.per_sec_ms, 500.0);
        assert_eq!(s.pipeline_engine.name, "wav2lip_fp32");
        assert_eq!(s.segmenter.vad.max_segment_ms, None);
        assert_eq!(s.clip_lengths_s, [2.0, 4.5]);
    }
}
