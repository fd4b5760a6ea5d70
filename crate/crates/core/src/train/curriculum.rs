use rand::Rng;

use super::{CurriculumConfig, Termination};
use crate::sim::{TerrainKind, TerrainProfile};

/// What the curriculum needs to know about a finished episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub steps: usize,
    pub duration_s: f64,
    pub command: f64,
    /// Mean of the unweighted linear-velocity tracking term.
    pub mean_tracking: f64,
    /// Base displacement along the commanded direction (m).
    pub distance: f64,
    /// Sum of the scaled rewards.
    pub total_reward: f64,
    pub verdict: Termination,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurriculumEvent {
    Promoted,
    Demoted,
    Kept,
}

/// Demote to a random lower level when the robot covered less than the
/// configured share of the commanded distance; otherwise promote when
/// tracking was good.
pub fn update_curriculum<R: Rng>(
    level: usize,
    summary: &EpisodeSummary,
    cfg: &CurriculumConfig,
    rng: &mut R,
) -> (usize, CurriculumEvent) {
    let commanded = summary.command.abs() * summary.duration_s;
    if summary.distance < cfg.demote_distance * commanded {
        let to = if level == 0 { 0 } else { rng.gen_range(0..level) };
        return (to, CurriculumEvent::Demoted);
    }
    if summary.mean_tracking > cfg.promote_tracking {
        return ((level + 1).min(cfg.max_level), CurriculumEvent::Promoted);
    }
    (level, CurriculumEvent::Kept)
}

/// Terrain of the given kind at a curriculum level; difficulty grows
/// linearly up to the configured maxima at `max_level`.
pub fn terrain_for_level(kind: TerrainKind, level: usize, cfg: &CurriculumConfig, seed: u64) -> TerrainProfile {
    let frac = if cfg.max_level == 0 {
        0.0
    } else {
        level.min(cfg.max_level) as f64 / cfg.max_level as f64
    };
    match kind {
        TerrainKind::Plane => TerrainProfile::Plane,
        TerrainKind::Rough => TerrainProfile::Rough {
            amplitude: 0.5 * frac * cfg.max_rough_height,
            correlation_length: cfg.rough_correlation_length,
            seed,
        },
        TerrainKind::Stair => TerrainProfile::Stair {
            step_height: frac * cfg.max_step_height,
            step_width: cfg.step_width,
        },
        TerrainKind::Slope => TerrainProfile::Slope {
            angle: frac * cfg.max_slope,
        },
    }
}

/// Levels of every environment plus event counters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurriculumState {
    pub levels: Vec<usize>,
    pub max_level: usize,
    pub promotions: u64,
    pub demotions: u64,
}

impl CurriculumState {
    pub fn new(envs: usize, max_level: usize) -> Self {
        CurriculumState {
            levels: vec![0; envs],
            max_level,
            promotions: 0,
            demotions: 0,
        }
    }

    pub fn record(&mut self, env: usize, level: usize, event: CurriculumEvent) {
        self.levels[env] = level;
        match event {
            CurriculumEvent::Promoted => self.promotions += 1,
            CurriculumEvent::Demoted => self.demotions += 1,
            CurriculumEvent::Kept => {}
        }
    }

    pub fn mean_level(&self) -> f64 {
        self.levels.iter().sum::<usize>() as f64 / self.levels.len().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn summary(mean_tracking: f64, distance: f64) -> EpisodeSummary {
        EpisodeSummary {
            steps: 1000,
            duration_s: 20.0,
            command: 0.5,
            mean_tracking,
            distance,
            total_reward: 0.0,
            verdict: Termination::Timeout,
        }
    }

    #[test]
    fn perfect_tracking_promotes_up_to_the_cap() {
        let cfg = CurriculumConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(update_curriculum(3, &summary(1.0, 10.0), &cfg, &mut rng), (4, CurriculumEvent::Promoted));
        let top = cfg.max_level;
        assert_eq!(update_curriculum(top, &summary(1.0, 10.0), &cfg, &mut rng).0, top);
    }

    #[test]
    fn early_fall_demotes() {
        let cfg = CurriculumConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fell = EpisodeSummary {
            steps: 3,
            duration_s: 0.06,
            distance: 0.0,
            mean_tracking: 0.9,
            verdict: Termination::Fell,
            ..summary(0.9, 0.0)
        };
        let (level, event) = update_curriculum(5, &fell, &cfg, &mut rng);
        assert_eq!(event, CurriculumEvent::Demoted);
        assert!(level < 5);
        assert_eq!(update_curriculum(0, &fell, &cfg, &mut rng).0, 0);
    }

    #[test]
    fn top_level_reaches_configured_maxima() {
        let cfg = CurriculumConfig::default();
        match terrain_for_level(TerrainKind::Stair, cfg.max_level, &cfg, 0) {
            TerrainProfile::Stair { step_height, .. } => assert!(step_height <= 0.085),
            other => panic!("{other:?}"),
        }
        assert_eq!(terrain_for_level(TerrainKind::Slope, 0, &cfg, 0), TerrainProfile::Slope { angle: 0.0 });
    }
}
