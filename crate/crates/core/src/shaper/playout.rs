/// Sender-side estimate of how much content the client still has buffered.
///
/// Playback starts once `startup_s` of content has been sent. If the
/// estimate runs dry, playback pauses and resumes after `startup_s` is
/// buffered again, as the client does.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayoutEstimator {
    startup_s: f64,
    content_sent_s: f64,
    playback_start: Option<f64>,
    /// `(time, position)` at which playback last (re)started.
    playing: Option<(f64, f64)>,
    paused_at_s: f64,
    underruns: u32,
}

impl PlayoutEstimator {
    pub fn new(startup_s: f64) -> Self {
        PlayoutEstimator { startup_s, content_sent_s: 0.0, playback_start: None, playing: None, paused_at_s: 0.0, underruns: 0 }
    }

    /// Records `content_s` seconds of content delivered at `time_s`.
    pub fn record(&mut self, time_s: f64, content_s: f64) {
        if let Some((t0, p0)) = self.playing {
            if p0 + (time_s - t0) > self.content_sent_s {
                self.playing = None;
                self.paused_at_s = self.content_sent_s;
                self.underruns += 1;
            }
        }
        self.content_sent_s += content_s;
        if self.playing.is_none() && self.content_sent_s - self.paused_at_s >= self.startup_s {
            self.playing = Some((time_s, self.paused_at_s));
            self.playback_start.get_or_insert(time_s);
        }
    }

    pub fn content_sent_s(&self) -> f64 {
        self.content_sent_s
    }

    pub fn playback_start(&self) -> Option<f64> {
        self.playback_start
    }

    /// Times the estimate ran dry.
    pub fn underruns(&self) -> u32 {
        self.underruns
    }

    fn position_s(&self, now_s: f64) -> f64 {
        match self.playing {
            Some((t0, p0)) => (p0 + (now_s - t0).max(0.0)).min(self.content_sent_s),
            None => self.paused_at_s,
        }
    }

    pub fn buffered_s(&self, now_s: f64) -> f64 {
        self.content_sent_s - self.position_s(now_s)
    }

    /// Earliest time, not before `now_s`, at which the estimated buffer is
    /// down to `lead_s`.
    pub fn time_for_lead(&self, now_s: f64, lead_s: f64) -> f64 {
        match self.playing {
            Some((t0, p0)) => (t0 + self.content_sent_s - lead_s - p0).max(now_s),
            None => now_s,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lead_timing() {
        let mut e = PlayoutEstimator::new(2.0);
        e.record(0.5, 1.0);
        assert_eq!(e.playback_start(), None);
        assert_eq!(e.time_for_lead(0.5, 5.0), 0.5);
        e.record(1.0, 19.0);
        assert_eq!(e.playback_start(), Some(1.0));
        assert_eq!(e.buffered_s(6.0), 15.0);
        assert_eq!(e.time_for_lead(2.0, 5.0), 16.0);
        assert_eq!(e.time_for_lead(30.0, 5.0), 30.0);
    }

    #[test]
    fn underrun_pauses_until_rebuffered() {
        let mut e = PlayoutEstimator::new(2.0);
        e.record(0.0, 10.0);
        // dry from t = 10 until 2 s are back at t = 14
        e.record(12.0, 1.0);
        assert_eq!(e.underruns(), 1);
        assert_eq!(e.buffered_s(13.0), 1.0);
        assert_eq!(e.time_for_lead(12.0, 5.0), 12.0);
        e.record(14.0, 1.0);
        assert_eq!(e.playback_start(), Some(0.0));
        assert_eq!(e.buffered_s(15.0), 1.0);
        e.record(15.0, 20.0);
        assert_eq!(e.time_for_lead(15.0, 5.0), 31.0);
    }
}
