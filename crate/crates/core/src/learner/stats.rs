use std::fmt;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

/// Snapshot of a learner's cumulative counters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Counters {
    pub received_frames: u64,
    pub consumed_frames: u64,
    /// Consumed frames that were received in the current measurement epoch.
    pub consumed_epoch_frames: u64,
    pub received_epoch_frames: u64,
    pub update_steps: u64,
    pub stale_dropped: u64,
    pub duplicates_dropped: u64,
    pub evicted: u64,
}

impl Counters {
    pub fn add(&mut self, o: &Counters) {
        self.received_frames += o.received_frames;
        self.consumed_frames += o.consumed_frames;
        self.consumed_epoch_frames += o.consumed_epoch_frames;
        self.received_epoch_frames += o.received_epoch_frames;
        self.update_steps = self.update_steps.max(o.update_steps);
        self.stale_dropped += o.stale_dropped;
        self.duplicates_dropped += o.duplicates_dropped;
        self.evicted += o.evicted;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputStats {
    pub rfps: f64,
    pub cfps: f64,
    pub reuse_ratio: f64,
    pub update_steps: u64,
}

impl ThroughputStats {
    /// Rates between two counter snapshots taken `elapsed` apart.
    pub fn between(before: &Counters, after: &Counters, elapsed: Duration) -> Self {
        let secs = elapsed.as_secs_f64().max(1e-9);
        let rfps = (after.received_frames - before.received_frames) as f64 / secs;
        let cfps = (after.consumed_frames - before.consumed_frames) as f64 / secs;
        ThroughputStats {
            rfps,
            cfps,
            reuse_ratio: if rfps > 0.0 { cfps / rfps } else { 0.0 },
            update_steps: after.update_steps,
        }
    }

    /// Rates over one measurement epoch; consumption only counts frames received during it.
    pub fn epoch(c: &Counters, elapsed: Duration) -> Self {
        let secs = elapsed.as_secs_f64().max(1e-9);
        let rfps = c.received_epoch_frames as f64 / secs;
        let cfps = c.consumed_epoch_frames as f64 / secs;
        ThroughputStats {
            rfps,
            cfps,
            reuse_ratio: if rfps > 0.0 { cfps / rfps } else { 0.0 },
            update_steps: c.update_steps,
        }
    }
}

/// One metrics-log line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsLine {
    pub ts: f64,
    pub group: u32,
    pub rfps: f64,
    pub cfps: f64,
    pub steps: u64,
}

impl MetricsLine {
    pub fn now(group: u32, s: &ThroughputStats) -> Self {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        MetricsLine {
            ts,
            group,
            rfps: s.rfps,
            cfps: s.cfps,
            steps: s.update_steps,
        }
    }

    pub fn parse(line: &str) -> Option<MetricsLine> {
        let mut ts = None;
        let mut group = None;
        let mut rfps = None;
        let mut cfps = None;
        let mut steps = None;
        for field in line.split_whitespace() {
            let (k, v) = field.split_once('=')?;
            match k {
                "ts" => ts = v.parse().ok(),
                "group" => group = v.parse().ok(),
                "rfps" => rfps = v.parse().ok(),
                "cfps" => cfps = v.parse().ok(),
                "steps" => steps = v.parse().ok(),
                _ => {}
            }
        }
        Some(MetricsLine {
            ts: ts?,
            group: group?,
            rfps: rfps?,
            cfps: cfps?,
            steps: steps?,
        })
    }
}

impl fmt::Display for MetricsLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ts={:.3} group={} rfps={:.2} cfps={:.2} steps={}",
            self.ts, self.group, self.rfps, self.cfps, self.steps
        )
    }
}
