//! Seeded synthetic traffic.
//!
//! Each application is an on/off modulated Poisson source: the source
//! alternates between exponentially distributed on and off periods, and while
//! on, uplink and downlink packets arrive as independent Poisson processes.
//! Profile parameters live in `profiles.json` next to this crate's manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1, LogNormal};
use serde::{Deserialize, Serialize};

use crate::ingest::{interval_count, Direction, PacketRecord, Protocol};

const PROFILES_JSON: &str = include_str!("../profiles.json");

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid profile for {app}: {reason}")]
    InvalidProfile { app: App, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum App {
    Surfing,
    VideoCall,
    VoiceCall,
    Streaming,
    Background,
}

impl App {
    pub const ALL: [App; 5] = [
        App::Surfing,
        App::VideoCall,
        App::VoiceCall,
        App::Streaming,
        App::Background,
    ];

    /// The four applications used as classification classes, in class-index order.
    pub const CLASSIFIED: [App; 4] = [App::Surfing, App::VideoCall, App::VoiceCall, App::Streaming];

    pub fn as_str(self) -> &'static str {
        match self {
            App::Surfing => "Surfing",
            App::VideoCall => "VideoCall",
            App::VoiceCall => "VoiceCall",
            App::Streaming => "Streaming",
            App::Background => "Background",
        }
    }

    /// Position in [`App::CLASSIFIED`], if this app is a classification class.
    pub fn class_index(self) -> Option<usize> {
        App::CLASSIFIED.iter().position(|a| *a == self)
    }
}

impl fmt::Display for App {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for App {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        App::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown app {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnOff {
    pub on_mean_s: f64,
    pub off_mean_s: f64,
}

impl OnOff {
    pub fn duty_cycle(&self) -> f64 {
        self.on_mean_s / (self.on_mean_s + self.off_mean_s)
    }
}

/// Log-normal packet sizes; `dispersion` is the coefficient of variation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeDist {
    pub mean_bytes: f64,
    pub dispersion: f64,
}

impl SizeDist {
    fn sampler(&self) -> LogNormal<f64> {
        let sigma2 = (1.0 + self.dispersion * self.dispersion).ln();
        let mu = self.mean_bytes.ln() - sigma2 / 2.0;
        LogNormal::new(mu, sigma2.sqrt()).expect("validated size parameters")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppProfile {
    pub app: App,
    /// Mean uplink packets per second while on.
    pub ul_rate: f64,
    /// Mean downlink packets per second while on.
    pub dl_rate: f64,
    pub burstiness: OnOff,
    pub ul_size: SizeDist,
    pub dl_size: SizeDist,
    pub protocol_mix: BTreeMap<Protocol, f64>,
}

#[derive(Deserialize)]
struct ProfileFile {
    profiles: Vec<AppProfile>,
}

/// All shipped profiles, one per [`App`].
pub fn default_profiles() -> Vec<AppProfile> {
    let file: ProfileFile = serde_json::from_str(PROFILES_JSON).expect("shipped profiles.json is valid");
    file.profiles
}

impl AppProfile {
    pub fn default_for(app: App) -> AppProfile {
        default_profiles()
            .into_iter()
            .find(|p| p.app == app)
            .expect("every app has a shipped profile")
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |reason: String| SynthError::InvalidProfile { app: self.app, reason };
        for (name, rate) in [("ul_rate", self.ul_rate), ("dl_rate", self.dl_rate)] {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(bad(format!("{name} must be positive, got {rate}")));
            }
        }
        let OnOff { on_mean_s, off_mean_s } = self.burstiness;
        if !(on_mean_s > 0.0 && on_mean_s.is_finite() && off_mean_s >= 0.0 && off_mean_s.is_finite()) {
            return Err(bad("on mean must be positive and off mean non-negative".into()));
        }
        for size in [self.ul_size, self.dl_size] {
            if !(size.mean_bytes >= 1.0 && size.dispersion >= 0.0) {
                return Err(bad(format!("invalid size distribution {size:?}")));
            }
        }
        let total: f64 = self.protocol_mix.values().sum();
        if self.protocol_mix.values().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(bad(format!("protocol mix must be a distribution, sums to {total}")));
        }
        Ok(())
    }

    /// Long-run mean packets per second in the given direction.
    pub fn mean_rate(&self, direction: Direction) -> f64 {
        let rate = match direction {
            Direction::Ul => self.ul_rate,
            Direction::Dl => self.dl_rate,
        };
        rate * self.burstiness.duty_cycle()
    }
}

/// SplitMix64 finalizer; maps (seed, stream) to an independent child seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct PacketSampler {
    ul_gap: Exp<f64>,
    dl_gap: Exp<f64>,
    ul_size: LogNormal<f64>,
    dl_size: LogNormal<f64>,
    protocols: Vec<Protocol>,
    protocol_pick: WeightedIndex<f64>,
}

impl PacketSampler {
    fn new(profile: &AppProfile) -> Self {
        let protocols: Vec<Protocol> = profile.protocol_mix.keys().copied().collect();
        let weights: Vec<f64> = profile.protocol_mix.values().copied().collect();
        PacketSampler {
            ul_gap: Exp::new(profile.ul_rate).expect("validated rate"),
            dl_gap: Exp::new(profile.dl_rate).expect("validated rate"),
            ul_size: profile.ul_size.sampler(),
            dl_size: profile.dl_size.sampler(),
            protocols,
            protocol_pick: WeightedIndex::new(weights).expect("validated protocol mix"),
        }
    }

    fn packet<R: Rng>(&self, rng: &mut R, timestamp: f64, direction: Direction) -> PacketRecord {
        let size = match direction {
            Direction::Ul => self.ul_size.sample(rng),
            Direction::Dl => self.dl_size.sample(rng),
        };
        PacketRecord {
            timestamp,
            direction,
            length: size.round().clamp(1.0, 65535.0) as u32,
            protocol: self.protocols[self.protocol_pick.sample(rng)],
        }
    }

    /// Poisson arrivals in `[start, end)`.
    fn fill<R: Rng>(&self, rng: &mut R, start: f64, end: f64, direction: Direction, out: &mut Vec<PacketRecord>) {
        let gap = match direction {
            Direction::Ul => &self.ul_gap,
            Direction::Dl => &self.dl_gap,
        };
        let mut t = start + gap.sample(rng);
        while t < end {
            out.push(self.packet(rng, t, direction));
            t += gap.sample(rng);
        }
    }
}

/// Generates `duration` seconds of traffic from `profile`. Deterministic in
/// `(profile, seed)`; timestamps lie in `[0, duration)` and are sorted.
pub fn generate(profile: &AppProfile, duration: f64, seed: u64) -> Result<Vec<PacketRecord>, SynthError> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(SynthError::InvalidArgument(format!(
            "duration must be positive, got {duration}"
        )));
    }
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = PacketSampler::new(profile);
    let OnOff { on_mean_s, off_mean_s } = profile.burstiness;

    let mut out = Vec::new();
    let mut on = rng.random::<f64>() < profile.burstiness.duty_cycle();
    let mut t = 0.0;
    while t < duration {
        let mean = if on { on_mean_s } else { off_mean_s };
        let len: f64 = mean * rng.sample::<f64, _>(Exp1);
        let end = (t + len).min(duration);
        if on {
            sampler.fill(&mut rng, t, end, Direction::Ul, &mut out);
            sampler.fill(&mut rng, t, end, Direction::Dl, &mut out);
        }
        t = end;
        on = !on;
    }
    out.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(out)
}

/// One scheduled stretch of a single application, `[start, end)` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub profile: AppProfile,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub records: Vec<PacketRecord>,
    /// Ground truth per labelled interval at the τ passed to [`generate_mixture`].
    pub labels: Vec<(usize, App)>,
    /// End of the last segment.
    pub horizon: f64,
}

/// Concatenates per-segment traffic into one trace and labels each interval
/// with the app of the segment covering most of it. Intervals touching no
/// segment are left unlabelled.
pub fn generate_mixture(schedule: &[Segment], tau: f64, seed: u64) -> Result<Mixture, SynthError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(SynthError::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let mut order: Vec<&Segment> = schedule.iter().collect();
    order.sort_by(|a, b| a.start.total_cmp(&b.start));
    for s in &order {
        if !(s.start >= 0.0 && s.end > s.start) {
            return Err(SynthError::InvalidArgument(format!(
                "segment [{}, {}) is empty or negative",
                s.start, s.end
            )));
        }
    }
    for pair in order.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(SynthError::InvalidArgument(format!(
                "segments [{}, {}) and [{}, {}) overlap",
                pair[0].start, pair[0].end, pair[1].start, pair[1].end
            )));
        }
    }

    let mut records = Vec::new();
    for (i, seg) in schedule.iter().enumerate() {
        let part = generate(&seg.profile, seg.end - seg.start, derive_seed(seed, i as u64))?;
        records.extend(part.into_iter().map(|mut r| {
            r.timestamp += seg.start;
            r
        }));
    }
    records.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));

    let horizon = order.last().map_or(0.0, |s| s.end);
    let n = if horizon > 0.0 { interval_count(tau, horizon) } else { 0 };
    let mut labels = Vec::with_capacity(n);
    let mut first = 0;
    for k in 0..n {
        let lo = k as f64 * tau;
        let hi = lo + tau;
        while first < order.len() && order[first].end <= lo {
            first += 1;
        }
        let mut best: Option<(f64, App)> = None;
        for seg in order[first..].iter().take_while(|s| s.start < hi) {
            let overlap = seg.end.min(hi) - seg.start.max(lo);
            if overlap > 0.0 && best.is_none_or(|(b, _)| overlap > b) {
                best = Some((overlap, seg.profile.app));
            }
        }
        if let Some((_, app)) = best {
            labels.push((k, app));
        }
    }
    Ok(Mixture { records, labels, horizon })
}

/// Writes labels-CSV: `interval_index,app` per line.
pub fn labels_to_string(labels: &[(usize, App)]) -> String {
    labels.iter().map(|(k, a)| format!("{k},{a}\n")).collect()
}

pub fn parse_labels(source: &str) -> Result<Vec<(usize, App)>, SynthError> {
    source
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let (k, app) = line
                .split_once(',')
                .ok_or_else(|| SynthError::InvalidArgument(format!("labels line {}: expected 2 fields", i + 1)))?;
            let k = k.trim().parse().map_err(|_| {
                SynthError::InvalidArgument(format!("labels line {}: bad interval index {k:?}", i + 1))
            })?;
            let app = app
                .trim()
                .parse()
                .map_err(|e| SynthError::InvalidArgument(format!("labels line {}: {e}", i + 1)))?;
            Ok((k, app))
        })
        .collect()
}

const DAY_S: f64 = 86_400.0;

/// A user-day style schedule: sessions of 5 to 60 minutes, back to back,
/// with apps drawn by usage weight. Background covers the idle stretches.
pub fn bursty_schedule(days: f64, seed: u64) -> Vec<Segment> {
    let weights = [
        (App::Background, 0.40),
        (App::Surfing, 0.25),
        (App::Streaming, 0.15),
        (App::VideoCall, 0.10),
        (App::VoiceCall, 0.10),
    ];
    let profiles = default_profiles();
    let pick = WeightedIndex::new(weights.iter().map(|w| w.1)).expect("static weights");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5c4e_d01e));
    let end = days * DAY_S;
    let mut t = 0.0;
    let mut out = Vec::new();
    while t < end {
        let app = weights[pick.sample(&mut rng)].0;
        let len = rng.random_range(300.0..3600.0);
        let stop = (t + len).min(end);
        let profile = profiles.iter().find(|p| p.app == app).expect("shipped").clone();
        out.push(Segment { profile, start: t, end: stop });
        t = stop;
    }
    out
}

/// Balanced schedule for classification: every classified app gets
/// `hours_per_app` hours, split into 10 to 30 minute sessions in seeded order.
pub fn classification_schedule(hours_per_app: f64, seed: u64) -> Vec<Segment> {
    let profiles = default_profiles();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xc1a5_5e5));
    let target = hours_per_app * 3600.0;
    let mut remaining = [target; 4];
    let mut t = 0.0;
    let mut out = Vec::new();
    while remaining.iter().any(|r| *r > 0.0) {
        let mut round: Vec<usize> = (0..4).filter(|i| remaining[*i] > 0.0).collect();
        round.shuffle(&mut rng);
        for i in round {
            let len = rng.random_range(600.0..1800.0_f64).min(remaining[i]);
            remaining[i] -= len;
            let app = App::CLASSIFIED[i];
            let profile = profiles.iter().find(|p| p.app == app).expect("shipped").clone();
            out.push(Segment { profile, start: t, end: t + len });
            t += len;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{bin_intervals, trace_to_string};

    fn seg(app: App, start: f64, end: f64) -> Segment {
        Segment { profile: AppProfile::default_for(app), start, end }
    }

    #[test]
    fn shipped_profiles_are_valid() {
        let profiles = default_profiles();
        assert_eq!(profiles.len(), App::ALL.len());
        for p in &profiles {
            p.validate().unwrap();
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let p = AppProfile::default_for(App::Surfing);
        let a = trace_to_string(&generate(&p, 500.0, 7).unwrap());
        let b = trace_to_string(&generate(&p, 500.0, 7).unwrap());
        assert_eq!(a, b);
        let c = trace_to_string(&generate(&p, 500.0, 8).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn timestamps_inside_duration_and_sorted() {
        let p = AppProfile::default_for(App::VoiceCall);
        let recs = generate(&p, 123.4, 1).unwrap();
        assert!(!recs.is_empty());
        assert!(recs.iter().all(|r| r.timestamp >= 0.0 && r.timestamp < 123.4));
        assert!(recs.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    }

    #[test]
    fn rejects_nonpositive_duration() {
        let p = AppProfile::default_for(App::VoiceCall);
        assert!(generate(&p, 0.0, 1).is_err());
        assert!(generate(&p, -5.0, 1).is_err());
    }

    #[test]
    fn rejects_bad_protocol_mix() {
        let mut p = AppProfile::default_for(App::VoiceCall);
        p.protocol_mix.insert(Protocol::Tcp, 0.5);
        assert!(matches!(generate(&p, 10.0, 1), Err(SynthError::InvalidProfile { .. })));
    }

    #[test]
    fn streaming_mean_rate_matches_profile() {
        let p = AppProfile::default_for(App::Streaming);
        let recs = generate(&p, 1000.0, 42).unwrap();
        let dl = recs.iter().filter(|r| r.direction == Direction::Dl).count() as f64 / 1000.0;
        let expected = p.mean_rate(Direction::Dl);
        assert!((dl - expected).abs() / expected < 0.10, "dl rate {dl} vs {expected}");
    }

    #[test]
    fn background_is_mostly_silent() {
        let p = AppProfile::default_for(App::Background);
        assert!(p.burstiness.off_mean_s > 10.0 * p.burstiness.on_mean_s);
        let recs = generate(&p, 3600.0, 3).unwrap();
        let iv = bin_intervals(&recs, 10.0, 3600.0).unwrap();
        let zero = iv.iter().filter(|x| x.total_count() == 0).count();
        assert!(zero * 2 > iv.len(), "{zero} of {} intervals silent", iv.len());
    }

    #[test]
    fn single_segment_labels() {
        let m = generate_mixture(&[seg(App::VideoCall, 0.0, 100.0)], 10.0, 1).unwrap();
        assert_eq!(m.labels.len(), 10);
        assert!(m.labels.iter().all(|(_, a)| *a == App::VideoCall));
    }

    #[test]
    fn label_counts_follow_durations() {
        let m = generate_mixture(
            &[seg(App::Surfing, 0.0, 100.0), seg(App::Streaming, 100.0, 300.0)],
            10.0,
            1,
        )
        .unwrap();
        let surf = m.labels.iter().filter(|(_, a)| *a == App::Surfing).count();
        let stream = m.labels.iter().filter(|(_, a)| *a == App::Streaming).count();
        assert_eq!((surf, stream), (10, 20));
    }

    #[test]
    fn straddling_interval_takes_majority_label() {
        let m = generate_mixture(
            &[seg(App::Surfing, 0.0, 14.0), seg(App::Streaming, 14.0, 30.0)],
            10.0,
            1,
        )
        .unwrap();
        assert_eq!(m.labels, vec![(0, App::Surfing), (1, App::Streaming), (2, App::Streaming)]);
    }

    #[test]
    fn gaps_are_unlabelled() {
        let m = generate_mixture(
            &[seg(App::Surfing, 0.0, 10.0), seg(App::Streaming, 20.0, 30.0)],
            10.0,
            1,
        )
        .unwrap();
        assert_eq!(m.labels, vec![(0, App::Surfing), (2, App::Streaming)]);
    }

    #[test]
    fn overlapping_segments_rejected() {
        let err = generate_mixture(
            &[seg(App::Surfing, 0.0, 100.0), seg(App::Streaming, 50.0, 150.0)],
            10.0,
            1,
        );
        assert!(matches!(err, Err(SynthError::InvalidArgument(_))));
    }

    #[test]
    fn per_app_ratio_differs() {
        let schedule = vec![
            seg(App::Surfing, 0.0, 1200.0),
            seg(App::VideoCall, 1200.0, 2400.0),
            seg(App::VoiceCall, 2400.0, 3600.0),
            seg(App::Streaming, 3600.0, 4800.0),
        ];
        let m = generate_mixture(&schedule, 10.0, 11).unwrap();
        let iv = bin_intervals(&m.records, 10.0, m.horizon).unwrap();
        let mean_ratio = |app: App| {
            let vals: Vec<f64> = m
                .labels
                .iter()
                .filter(|(_, a)| *a == app)
                .map(|(k, _)| iv[*k].ul_dl_ratio)
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        let voice = mean_ratio(App::VoiceCall);
        let stream = mean_ratio(App::Streaming);
        assert!((voice - 1.0).abs() < 0.1, "voice ratio {voice}");
        assert!(stream < 0.1, "streaming ratio {stream}");
        assert!(mean_ratio(App::VideoCall) < 0.6);
    }

    #[test]
    fn labels_csv_round_trip() {
        let labels = vec![(0, App::Surfing), (3, App::VoiceCall)];
        assert_eq!(parse_labels(&labels_to_string(&labels)).unwrap(), labels);
    }

    #[test]
    fn schedules_are_contiguous() {
        let s = bursty_schedule(0.5, 1);
        assert_eq!(s[0].start, 0.0);
        assert!(s.windows(2).all(|w| w[0].end == w[1].start));
        assert_eq!(s.last().unwrap().end, 43_200.0);

        let c = classification_schedule(1.0, 1);
        for app in App::CLASSIFIED {
            let total: f64 = c.iter().filter(|x| x.profile.app == app).map(|x| x.end - x.start).sum();
            assert!((total - 3600.0).abs() < 1e-6);
        }
    }
}
