//! Random Waypoint mobility.

use std::ops::{Add, Mul, Sub};

use rand::{Rng, RngExt};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Vec2) -> f64 {
        (self - other).norm()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RwpParams {
    pub arena_m: f64,
    pub v_max: f64,
    pub pause_s: f64,
    /// Lower end of the speed interval.
    pub min_speed: f64,
}

impl RwpParams {
    pub fn new(arena_m: f64, v_max: f64) -> Self {
        Self {
            arena_m,
            v_max,
            pause_s: 2.0,
            min_speed: 0.01,
        }
    }

    fn draw_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec2 {
        Vec2::new(
            rng.random_range(0.0..=self.arena_m),
            rng.random_range(0.0..=self.arena_m),
        )
    }

    fn draw_speed<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.v_max <= self.min_speed {
            self.v_max
        } else {
            // Uniform on (min_speed, v_max].
            self.v_max - rng.random_range(0.0..(self.v_max - self.min_speed))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Moving,
    Paused,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RwpState {
    pub from: Vec2,
    pub to: Vec2,
    pub speed: f64,
    pub phase: Phase,
    pub phase_start: f64,
    /// Infinite for a node that never moves.
    pub phase_end: f64,
}

impl RwpState {
    /// Uniform random start, heading for the first waypoint at t = 0.
    pub fn initial<R: Rng + ?Sized>(params: &RwpParams, rng: &mut R) -> Self {
        let start = params.draw_point(rng);
        Self::moving_from(start, 0.0, params, rng)
    }

    /// A node parked at `position` forever.
    pub fn fixed(position: Vec2) -> Self {
        Self {
            from: position,
            to: position,
            speed: 0.0,
            phase: Phase::Paused,
            phase_start: 0.0,
            phase_end: f64::INFINITY,
        }
    }

    fn moving_from<R: Rng + ?Sized>(from: Vec2, t: f64, params: &RwpParams, rng: &mut R) -> Self {
        let to = params.draw_point(rng);
        let speed = params.draw_speed(rng);
        if speed <= 0.0 {
            return Self {
                phase_start: t,
                ..Self::fixed(from)
            };
        }
        Self {
            from,
            to,
            speed,
            phase: Phase::Moving,
            phase_start: t,
            phase_end: t + from.dist(to) / speed,
        }
    }

    pub fn position_at(&self, t: f64) -> Vec2 {
        match self.phase {
            Phase::Paused => self.from,
            Phase::Moving => {
                let total = self.phase_end - self.phase_start;
                if total <= 0.0 {
                    return self.to;
                }
                let frac = ((t - self.phase_start) / total).clamp(0.0, 1.0);
                self.from + (self.to - self.from) * frac
            }
        }
    }

    pub fn velocity(&self) -> Vec2 {
        match self.phase {
            Phase::Paused => Vec2::default(),
            Phase::Moving => {
                let d = self.from.dist(self.to);
                if d == 0.0 {
                    Vec2::default()
                } else {
                    (self.to - self.from) * (self.speed / d)
                }
            }
        }
    }

    /// State of the phase that follows this one.
    pub fn advance<R: Rng + ?Sized>(&self, params: &RwpParams, rng: &mut R) -> Self {
        match self.phase {
            Phase::Moving => Self {
                from: self.to,
                to: self.to,
                speed: 0.0,
                phase: Phase::Paused,
                phase_start: self.phase_end,
                phase_end: self.phase_end + params.pause_s,
            },
            Phase::Paused => Self::moving_from(self.from, self.phase_end, params, rng),
        }
    }
}

/// Trajectory that advances its state on demand.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: RwpParams,
    pub state: RwpState,
}

impl Trajectory {
    /// Advance through every phase ending at or before `t`; returns whether
    /// the phase changed.
    pub fn catch_up<R: Rng + ?Sized>(&mut self, t: f64, rng: &mut R) -> bool {
        let mut changed = false;
        while self.state.phase_end <= t {
            self.state = self.state.advance(&self.params, rng);
            changed = true;
        }
        changed
    }

    pub fn position_at(&self, t: f64) -> Vec2 {
        self.state.position_at(t)
    }
}
