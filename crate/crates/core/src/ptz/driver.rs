use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::clock::Clock;
use crate::codebook::{segment_travel_ms, GestureId, MotionPlan};
use crate::score::Bearing;

use super::camera::Camera;
use super::{CameraPose, DriverConfig, DriverError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MotionDone {
    pub gesture: GestureId,
    pub t_ms: u64,
}

/// Run `plan` to completion on `camera`: for each segment, command the
/// target, poll until within tolerance, then hold. Every polled pose is
/// passed to `on_pose`. `cancelled` is checked at every poll; when it
/// returns true the camera is stopped and the plan abandoned.
pub fn execute(
    plan: &MotionPlan,
    gesture: GestureId,
    camera: &mut dyn Camera,
    clock: &dyn Clock,
    config: &DriverConfig,
    on_pose: &mut dyn FnMut(u64, CameraPose),
    cancelled: &dyn Fn() -> bool,
) -> Result<MotionDone, DriverError> {
    let tol = config.arrival_tolerance_deg;
    let poll = config.poll_interval_ms.max(1);
    for seg in &plan.segments {
        let start = camera.pose()?;
        let expected = segment_travel_ms(Bearing::new(start.pan, start.tilt), seg, &config.kinematics);
        let limit_ms = (2.0 * expected).ceil() as u64 + poll;
        camera.move_to(seg.target(), seg.speed)?;
        let began = clock.now_ms();
        loop {
            if cancelled() {
                camera.stop()?;
                return Err(DriverError::Preempted(gesture));
            }
            let pose = camera.pose()?;
            on_pose(clock.now_ms(), pose);
            if (pose.pan - seg.target_pan).abs() <= tol && (pose.tilt - seg.target_tilt).abs() <= tol {
                break;
            }
            if clock.now_ms() - began > limit_ms {
                camera.stop()?;
                return Err(DriverError::Timeout { gesture, limit_ms });
            }
            clock.sleep_ms(poll);
        }
        clock.sleep_ms(seg.hold_ms);
    }
    Ok(MotionDone { gesture, t_ms: clock.now_ms() })
}

#[derive(Debug, Clone, PartialEq)]
pub enum DriverEvent {
    Pose { t_ms: u64, pose: CameraPose },
    MotionDone(MotionDone),
    Fault { gesture: GestureId, error: String },
}

enum Job {
    Run { plan: MotionPlan, gesture: GestureId, epoch: u64 },
    Stop { epoch: u64 },
}

/// Thread-safe front end to a single executor thread that owns the camera.
/// Plans run strictly one at a time, in submission order.
pub struct DriverHandle {
    jobs: Option<Sender<Job>>,
    epoch: Arc<AtomicU64>,
    worker: Option<JoinHandle<()>>,
}

impl DriverHandle {
    pub fn spawn(
        mut camera: Box<dyn Camera>,
        clock: Arc<dyn Clock>,
        config: DriverConfig,
        events: Sender<DriverEvent>,
    ) -> DriverHandle {
        let (tx, rx): (Sender<Job>, Receiver<Job>) = mpsc::channel();
        let epoch = Arc::new(AtomicU64::new(0));
        let shared = epoch.clone();
        let worker = std::thread::Builder::new()
            .name("ptz-driver".into())
            .spawn(move || {
                for job in rx {
                    match job {
                        Job::Run { plan, gesture, epoch } => {
                            if epoch < shared.load(Ordering::Acquire) {
                                continue;
                            }
                            let cancelled = || shared.load(Ordering::Acquire) > epoch;
                            let mut on_pose = |t_ms, pose| {
                                let _ = events.send(DriverEvent::Pose { t_ms, pose });
                            };
                            let outcome =
                                execute(&plan, gesture, camera.as_mut(), clock.as_ref(), &config, &mut on_pose, &cancelled);
                            let event = match outcome {
                                Ok(done) => DriverEvent::MotionDone(done),
                                Err(DriverError::Preempted(_)) => continue,
                                Err(e) => DriverEvent::Fault { gesture, error: e.to_string() },
                            };
                            if events.send(event).is_err() {
                                break;
                            }
                        }
                        Job::Stop { epoch } => {
                            if epoch == shared.load(Ordering::Acquire) {
                                if let Err(e) = camera.stop() {
                                    log::warn!("stop failed: {e}");
                                }
                            }
                        }
                    }
                }
            })
            .expect("spawn driver thread");
        DriverHandle { jobs: Some(tx), epoch, worker: Some(worker) }
    }

    /// Queue a plan behind any already submitted.
    pub fn submit(&self, plan: MotionPlan, gesture: GestureId) {
        let epoch = self.epoch.load(Ordering::Acquire);
        self.send(Job::Run { plan, gesture, epoch });
    }

    /// Drop everything queued, stop the running plan (no `MotionDone` is
    /// reported for it) and run `plan` once the camera has stopped.
    pub fn preempt(&self, plan: MotionPlan, gesture: GestureId) {
        let epoch = self.epoch.fetch_add(1, Ordering::AcqRel) + 1;
        self.send(Job::Stop { epoch });
        self.send(Job::Run { plan, gesture, epoch });
    }

    /// Drop everything and stop the camera.
    pub fn halt(&self) {
        let epoch = self.epoch.fetch_add(1, Ordering::AcqRel) + 1;
        self.send(Job::Stop { epoch });
    }

    fn send(&self, job: Job) {
        if let Some(tx) = &self.jobs {
            let _ = tx.send(job);
        }
    }
}

impl Drop for DriverHandle {
    fn drop(&mut self) {
        self.jobs.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
