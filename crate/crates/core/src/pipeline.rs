//! SLAM orchestration: tracking, keyframing, mapping windows, final
//! refinement and export.

use std::collections::{HashSet, VecDeque};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::SlamConfig;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::{backproject, Intrinsics, Pose};
use crate::io::logs;
use crate::io::ply::PointCloud;
use crate::mapping::optimize_window;
use crate::raster::{render, DepthMode};
use crate::surfel_map::{densify, prune, SurfelMap};
use crate::tracking::{icp_track, track_frame, IcpReference, TrackerKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyframeConfig {
    /// Rotation to the last keyframe (radians) that triggers a new keyframe.
    pub rotation_threshold: f64,
    /// Camera-center distance to the last keyframe (meters).
    pub translation_threshold: f64,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        Self {
            rotation_threshold: 0.35,
            translation_threshold: 0.3,
        }
    }
}

impl KeyframeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rotation_threshold > 0.0 && self.translation_threshold > 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("keyframe thresholds must be positive: {self:?}")))
        }
    }

    pub fn is_keyframe(&self, last: &Pose, pose: &Pose) -> bool {
        pose.rotation_angle_to(last) > self.rotation_threshold
            || (pose.camera_center() - last.camera_center()).norm() > self.translation_threshold
    }
}

#[derive(Debug, Clone)]
pub struct Keyframe {
    pub frame_id: usize,
    pub frame: Frame,
    pub pose: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    /// The single window on frame 0.
    Bootstrap,
    /// Triggered by a new keyframe; runs over all keyframes.
    Keyframe,
    /// Every `map_every` frames; runs over the recent frames.
    Regular,
    /// Final refinement over all keyframes.
    Final,
}

/// Record of one mapping window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowEvent {
    pub frame_id: usize,
    pub kind: WindowKind,
    pub frames: Vec<usize>,
    pub iterations: usize,
    pub added: usize,
    pub pruned: usize,
    pub first_loss: f64,
    pub last_loss: f64,
}

pub struct SlamState {
    pub map: SurfelMap,
    pub keyframes: Vec<Keyframe>,
    /// `(timestamp, world-to-camera pose)` per processed frame.
    pub trajectory: Vec<(f64, Pose)>,
    pub intrinsics: Intrinsics,
    pub config: SlamConfig,
    pub events: Vec<WindowEvent>,
    /// The most recent `map_every` frames with their poses.
    recent: VecDeque<(usize, Frame, Pose)>,
    /// Directory for CSV traces, if any.
    pub log_dir: Option<PathBuf>,
}

impl SlamState {
    pub fn new(intrinsics: Intrinsics, config: SlamConfig) -> Result<Self> {
        intrinsics.validate()?;
        config.validate()?;
        Ok(Self {
            map: SurfelMap::new(),
            keyframes: Vec::new(),
            trajectory: Vec::new(),
            intrinsics,
            config,
            events: Vec::new(),
            recent: VecDeque::new(),
            log_dir: None,
        })
    }

    pub fn with_log_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.log_dir = Some(dir.into());
        self
    }

    pub fn frames_processed(&self) -> usize {
        self.trajectory.len()
    }

    /// Tracks `frame` (except the first), then runs the keyframe and mapping
    /// schedule. Returns the estimated world-to-camera pose.
    pub fn process_frame(&mut self, frame: Frame) -> Result<Pose> {
        let id = self.frames_processed();
        if frame.dims() != (self.intrinsics.width, self.intrinsics.height) {
            return Err(Error::ResolutionMismatch {
                expected: (self.intrinsics.width, self.intrinsics.height),
                got: frame.dims(),
            });
        }
        let pose = if id == 0 {
            Pose::identity()
        } else {
            self.track(id, &frame).map_err(|e| e.at_frame(id))?
        };
        self.trajectory.push((frame.timestamp, pose));
        let m = self.config.mapping.map_every;
        self.recent.push_back((id, frame.clone(), pose));
        while self.recent.len() > m {
            self.recent.pop_front();
        }

        if id == 0 {
            self.keyframes.push(Keyframe {
                frame_id: 0,
                frame: frame.clone(),
                pose,
            });
            self.densify_from(&frame, &pose);
            self.run_window(id, WindowKind::Bootstrap)?;
            return Ok(pose);
        }

        let last = self.keyframes.last().expect("frame 0 is a keyframe").pose;
        if self.config.keyframe.is_keyframe(&last, &pose) {
            self.keyframes.push(Keyframe {
                frame_id: id,
                frame,
                pose,
            });
            self.run_window(id, WindowKind::Keyframe)?;
        } else if id % m == 0 {
            self.run_window(id, WindowKind::Regular)?;
        }
        Ok(pose)
    }

    fn track(&self, id: usize, frame: &Frame) -> Result<Pose> {
        let init = self.trajectory.last().expect("frame 0 processed").1;
        let k = &self.intrinsics;
        let cfg = &self.config;
        match cfg.tracking.tracker {
            TrackerKind::Coupled => {
                let (pose, trace) = track_frame(&self.map, frame, &init, k, &cfg.render, &cfg.tracking)?;
                if let Some(dir) = &self.log_dir {
                    logs::append_tracking_trace(&dir.join("tracking.csv"), id, &trace)?;
                }
                Ok(pose)
            }
            TrackerKind::Icp => {
                let model = render(&self.map, &init, k, &cfg.render);
                let reference = IcpReference::from_render(&model, &init);
                icp_track(frame, &reference, &init, k, &cfg.icp)
            }
        }
    }

    fn densify_from(&mut self, frame: &Frame, pose: &Pose) -> usize {
        let out = render(&self.map, pose, &self.intrinsics, &self.config.render);
        densify(
            &mut self.map,
            frame,
            &out,
            pose,
            &self.intrinsics,
            &self.config.management,
        )
    }

    fn run_window(&mut self, id: usize, kind: WindowKind) -> Result<()> {
        let iterations = match kind {
            WindowKind::Final => {
                self.config.mapping.iterations_per_window * self.config.mapping.final_refine_multiplier
            }
            _ => self.config.mapping.iterations_per_window,
        };
        let (frame_ids, window): (Vec<usize>, Vec<(&Frame, &Pose)>) = match kind {
            WindowKind::Regular => self.recent.iter().map(|(fid, f, p)| (*fid, (f, p))).unzip(),
            _ => self
                .keyframes
                .iter()
                .map(|kf| (kf.frame_id, (&kf.frame, &kf.pose)))
                .unzip(),
        };
        let trace = optimize_window(
            &mut self.map,
            &window,
            &self.intrinsics,
            &self.config.render,
            &self.config.mapping,
            iterations,
        )?;
        let (newest, newest_pose) = window
            .last()
            .map(|(f, p)| ((*f).clone(), **p))
            .expect("window is non-empty");
        if let Some(dir) = &self.log_dir {
            logs::append_mapping_trace(&dir.join("mapping.csv"), self.events.len(), &frame_ids, &trace)?;
        }
        let (mut added, mut pruned) = (0, 0);
        if kind != WindowKind::Final {
            added = self.densify_from(&newest, &newest_pose);
            pruned = prune(&mut self.map, &self.config.management);
        }
        log::debug!(
            "frame {id}: {kind:?} window over {frame_ids:?}, {iterations} iterations, +{added} -{pruned} surfels ({} total)",
            self.map.len()
        );
        self.events.push(WindowEvent {
            frame_id: id,
            kind,
            frames: frame_ids,
            iterations: trace.len(),
            added,
            pruned,
            first_loss: trace.first().map_or(f64::NAN, |s| s.loss.total),
            last_loss: trace.last().map_or(f64::NAN, |s| s.loss.total),
        });
        Ok(())
    }

    /// Refines the map over all keyframes with the final iteration budget.
    pub fn finalize(&mut self) -> Result<()> {
        if self.keyframes.is_empty() {
            return Err(Error::InsufficientData("no keyframes to refine".into()));
        }
        let id = self.frames_processed().saturating_sub(1);
        self.run_window(id, WindowKind::Final)
    }

    /// Back-projects adaptive-mode keyframe renders into a world point cloud,
    /// keeping one point per `voxel`-sized cell.
    pub fn export_pointcloud(&self, stride: usize, voxel: f64) -> PointCloud {
        let k = &self.intrinsics;
        let cfg = self.config.render.with_depth_mode(DepthMode::Adaptive);
        let stride = stride.max(1);
        let mut seen = HashSet::new();
        let mut cloud = PointCloud::default();
        for kf in &self.keyframes {
            let out = render(&self.map, &kf.pose, k, &cfg);
            let c2w = kf.pose.inverse();
            for row in (0..k.height).step_by(stride) {
                for col in (0..k.width).step_by(stride) {
                    let idx = row * k.width + col;
                    if !out.valid[idx] {
                        continue;
                    }
                    let Ok(p) = backproject(col as f64, row as f64, out.depth[idx], k) else {
                        continue;
                    };
                    let p = c2w.transform_point(&p);
                    let key = (p / voxel).map(|v| v.floor() as i64);
                    if !seen.insert((key.x, key.y, key.z)) {
                        continue;
                    }
                    let n = out.normal[idx];
                    let n = if n.norm() > 1e-12 {
                        c2w.transform_vector(&n.normalize())
                    } else {
                        n
                    };
                    cloud.push(p, n, out.color[idx]);
                }
            }
        }
        cloud
    }
}
