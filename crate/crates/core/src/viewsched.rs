//! Predefined view sequence with adaptive insertion of intermediate views
//! wherever too little of the next view is already painted.

use serde::{Deserialize, Serialize};

use crate::geometry::Viewpoint;
use crate::regions::{RegionCounts, RegionMasks};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScheduleError {
    #[error("invalid scheduler config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub beta: f64,
    pub gamma: f64,
    pub max_insert_depth: usize,
    pub predefined: Vec<Viewpoint>,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            gamma: 0.5,
            max_insert_depth: 3,
            predefined: default_views(1.0),
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(self.beta) {
            return Err(ScheduleError::Config(format!("beta {} not in (0,1)", self.beta)));
        }
        if !open(self.gamma) {
            return Err(ScheduleError::Config(format!("gamma {} not in (0,1)", self.gamma)));
        }
        if self.predefined.is_empty() {
            return Err(ScheduleError::Config("no predefined views".into()));
        }
        Ok(())
    }
}

/// Azimuth/elevation pairs of the five anchor views.
pub const ANCHOR_ANGLES: [(f64, f64); 5] = [(0.0, 15.0), (0.0, 35.0), (0.0, -5.0), (20.0, 15.0), (340.0, 15.0)];

/// The anchors, then a ring at 15° every 60° of azimuth, then top and bottom.
pub fn default_views(radius: f64) -> Vec<Viewpoint> {
    let ring = [60.0, 120.0, 180.0, 240.0, 300.0].map(|a| (a, 15.0));
    ANCHOR_ANGLES
        .iter()
        .chain(ring.iter())
        .chain([(0.0, 85.0), (0.0, -85.0)].iter())
        .map(|&(a, e)| Viewpoint::new(a, e, radius).expect("valid default view"))
        .collect()
}

/// Painted share of the paintable pixels of a view: `keep / (keep + new)`,
/// with UPDATE pixels counted on the painted side. 1 when nothing is
/// paintable.
pub fn coverage_ratio(counts: &RegionCounts) -> f64 {
    let painted = counts.keep + counts.update;
    let total = painted + counts.new;
    if total == 0 {
        1.0
    } else {
        painted as f64 / total as f64
    }
}

pub fn masks_coverage_ratio(masks: &RegionMasks) -> f64 {
    coverage_ratio(&masks.counts())
}

/// Azimuth along the shorter arc, elevation linearly; radius taken from `cur`.
pub fn interpolate_view(prev: &Viewpoint, cur: &Viewpoint, gamma: f64) -> Viewpoint {
    let mut d = (cur.azimuth - prev.azimuth).rem_euclid(360.0);
    if d > 180.0 {
        d -= 360.0;
    }
    let az = if gamma == 1.0 { cur.azimuth } else { prev.azimuth + gamma * d };
    let el = (1.0 - gamma) * prev.elevation + gamma * cur.elevation;
    Viewpoint::new(az, el, cur.radius).expect("interpolated view stays in range")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledView {
    pub viewpoint: Viewpoint,
    pub inserted: bool,
    /// Index into the predefined list of the view this one belongs to.
    pub predefined_index: usize,
    /// Coverage ratio at yield time; `None` for the very first view.
    pub p: Option<f64>,
    /// Coverage ratio when this view was first checked, before any
    /// insertion it triggered.
    pub p_first: Option<f64>,
    /// Yielded below the threshold because the insertion budget ran out.
    pub depth_limited: bool,
}

#[derive(Debug, Clone)]
struct Pending {
    view: Viewpoint,
    inserted: bool,
    p_first: Option<f64>,
}

/// Lazy view iterator. Each call to [`ViewScheduler::next_view`] measures
/// coverage through the caller's callback, so decisions see every view
/// painted so far.
#[derive(Debug, Clone)]
pub struct ViewScheduler {
    cfg: SchedulerConfig,
    next_predefined: usize,
    pending: Vec<Pending>,
    prev: Option<Viewpoint>,
    insertions: usize,
}

impl ViewScheduler {
    pub fn new(cfg: SchedulerConfig) -> Result<Self, ScheduleError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            next_predefined: 0,
            pending: Vec::new(),
            prev: None,
            insertions: 0,
        })
    }

    /// Continues a sequence whose last painted view was `prev`; the first
    /// predefined view is then checked like any other.
    pub fn resume_after(cfg: SchedulerConfig, prev: Option<Viewpoint>) -> Result<Self, ScheduleError> {
        let mut s = Self::new(cfg)?;
        s.prev = prev;
        Ok(s)
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.cfg
    }

    /// Next view to paint, or `None` when the sequence is exhausted.
    /// `masks_at` labels a candidate view against the current atlas.
    pub fn next_view<E>(
        &mut self,
        mut masks_at: impl FnMut(&Viewpoint) -> Result<RegionMasks, E>,
    ) -> Result<Option<ScheduledView>, E> {
        loop {
            let Some(top) = self.pending.last().cloned() else {
                if self.next_predefined == self.cfg.predefined.len() {
                    return Ok(None);
                }
                self.pending.push(Pending {
                    view: self.cfg.predefined[self.next_predefined],
                    inserted: false,
                    p_first: None,
                });
                self.next_predefined += 1;
                self.insertions = 0;
                continue;
            };
            let Some(prev) = self.prev else {
                return Ok(Some(self.emit(None, false)));
            };
            let p = masks_coverage_ratio(&masks_at(&top.view)?);
            if top.p_first.is_none() {
                self.pending.last_mut().expect("pending view").p_first = Some(p);
            }
            if p >= self.cfg.beta {
                return Ok(Some(self.emit(Some(p), false)));
            }
            if self.insertions >= self.cfg.max_insert_depth {
                log::warn!(
                    "view az={:.1} el={:.1}: coverage {p:.3} below {} after {} insertions",
                    top.view.azimuth,
                    top.view.elevation,
                    self.cfg.beta,
                    self.insertions
                );
                return Ok(Some(self.emit(Some(p), true)));
            }
            self.insertions += 1;
            self.pending.push(Pending {
                view: interpolate_view(&prev, &top.view, self.cfg.gamma),
                inserted: true,
                p_first: None,
            });
        }
    }

    fn emit(&mut self, p: Option<f64>, depth_limited: bool) -> ScheduledView {
        let top = self.pending.pop().expect("pending view");
        self.prev = Some(top.view);
        ScheduledView {
            viewpoint: top.view,
            inserted: top.inserted,
            predefined_index: self.next_predefined - 1,
            p,
            p_first: top.p_first,
            depth_limited,
        }
    }
}
