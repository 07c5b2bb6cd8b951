//! Periodic signal-authentication state machine.
//!
//! Authentication outcomes are ground truth: a successful one clears a
//! detector latch and re-admits GPS for a trust window of `N` steps, a failed
//! one triggers the same mitigation as a detection and flags the run for a
//! fail-safe handoff.

use serde::{Deserialize, Serialize};

use crate::detector::{mitigate, DetectorState};
use crate::error::{Error, Result};
use crate::solver::{SolverParams, WindowGraph};

/// Slow-channel authentication period, seconds.
pub const SLOW_CHANNEL_PERIOD_S: f64 = 180.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    Slow,
    Fast,
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthSchedule {
    pub epoch_length_steps: usize,
    pub channel: Channel,
}

impl AuthSchedule {
    pub fn new(epoch_length_steps: usize, channel: Channel) -> Result<Self> {
        if epoch_length_steps == 0 {
            return Err(Error::Config(
                "authentication epoch must be at least one step".into(),
            ));
        }
        Ok(Self {
            epoch_length_steps,
            channel,
        })
    }

    /// `N_epoch = 180 / Δt`.
    pub fn slow_channel(dt: f64) -> Result<Self> {
        Self::new((SLOW_CHANNEL_PERIOD_S / dt).round() as usize, Channel::Slow)
    }

    pub fn is_scheduled(&self, k: usize) -> bool {
        k.is_multiple_of(self.epoch_length_steps)
    }

    /// Smallest multiple of the epoch length strictly greater than `k`.
    pub fn next_auth_time(&self, k: usize) -> usize {
        (k / self.epoch_length_steps + 1) * self.epoch_length_steps
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuthOutcome {
    Authentic,
    Failed,
}

impl AuthOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            AuthOutcome::Authentic => "authentic",
            AuthOutcome::Failed => "failed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthEvent {
    pub time: usize,
    pub outcome: AuthOutcome,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuthAction {
    /// Authentic with a clean detector; only the trust window moves.
    TrustRefreshed,
    /// Authentic with a latched detector; latch cleared and GPS re-admitted.
    GpsReadmitted,
    /// Failed; GPS stripped from the window and excluded from now on.
    Mitigated,
    /// Odometry-only baseline: position re-initialized from the authenticated fix.
    PositionFix,
    /// Baseline that does not act on authentication.
    Ignored,
}

impl AuthAction {
    pub fn as_str(&self) -> &'static str {
        match self {
            AuthAction::TrustRefreshed => "trust-refreshed",
            AuthAction::GpsReadmitted => "gps-readmitted",
            AuthAction::Mitigated => "mitigated",
            AuthAction::PositionFix => "position-fix",
            AuthAction::Ignored => "ignored",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuthRecord {
    pub time: usize,
    pub outcome: AuthOutcome,
    pub action: AuthAction,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuthState {
    /// Detector trials at steps in `(last authentic, trust_until]` are skipped.
    pub trust_until: Option<usize>,
    last_authentic: Option<usize>,
    pub failsafe: bool,
    pub log: Vec<AuthRecord>,
}

impl AuthState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_trusted(&self, k: usize) -> bool {
        match (self.last_authentic, self.trust_until) {
            (Some(start), Some(end)) => k > start && k <= end,
            _ => false,
        }
    }
}

/// Applies an authentication outcome to the detector and the current window.
///
/// `trust_steps` is the number of steps GPS is relied on without detector
/// checks after a successful authentication (the window size).
pub fn on_authentication(
    schedule: &AuthSchedule,
    event: AuthEvent,
    trust_steps: usize,
    auth: &mut AuthState,
    detector: &mut DetectorState,
    graph: &mut WindowGraph,
    params: &SolverParams,
) -> Result<AuthAction> {
    if !schedule.is_scheduled(event.time) {
        return Err(Error::UnscheduledAuthentication {
            time: event.time,
            epoch: schedule.epoch_length_steps,
        });
    }
    let action = match event.outcome {
        AuthOutcome::Authentic => {
            let action = if detector.spoofed {
                AuthAction::GpsReadmitted
            } else {
                AuthAction::TrustRefreshed
            };
            detector.reset_latch();
            auth.last_authentic = Some(event.time);
            auth.trust_until = Some(event.time + trust_steps);
            action
        }
        AuthOutcome::Failed => {
            let (mitigated, _) = mitigate(graph, params)?;
            *graph = mitigated;
            detector.spoofed = true;
            auth.trust_until = None;
            auth.failsafe = true;
            AuthAction::Mitigated
        }
    };
    auth.log.push(AuthRecord {
        time: event.time,
        outcome: event.outcome,
        action,
    });
    Ok(action)
}
