//! Scripted motion plans: reference centroid pose and desired limb poses.

use std::f64::consts::PI;

use legged_mekf::RestPose;
use legged_mekf::Rotation;
use nalgebra::{Vector2, Vector3};

use crate::scenario::{Gait, HandParams, SimScenario, WalkParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimbKind {
    Foot,
    Hand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Expected to be in contact.
    Stance,
    /// Lifting or swinging; touchdown is possible once `landing` is set.
    Swing { landing: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimbPlan {
    /// Desired world pose of the limb frame.
    pub desired: RestPose,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub body_position: Vector3<f64>,
    pub body_orientation: Rotation,
    pub limbs: Vec<LimbPlan>,
}

/// Interval of single support of `limb`, suitable for a slip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportWindow {
    pub limb: usize,
    pub start: f64,
    pub end: f64,
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

fn cosine_blend(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    0.5 - 0.5 * (PI * s).cos()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Planar {
    xy: Vector2<f64>,
    yaw: f64,
}

impl Planar {
    fn lerp(&self, other: &Planar, s: f64) -> Planar {
        Planar {
            xy: self.xy + (other.xy - self.xy) * s,
            yaw: self.yaw + (other.yaw - self.yaw) * s,
        }
    }

    fn offset(&self, local: Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.yaw.sin_cos();
        self.xy + Vector2::new(c * local.x - s * local.y, s * local.x + c * local.y)
    }

    fn pose(&self, z: f64) -> RestPose {
        RestPose::new(Vector3::new(self.xy.x, self.xy.y, z), Rotation::about_z(self.yaw))
    }
}

#[derive(Debug, Clone)]
struct Cycle {
    swing: usize,
    stance: Planar,
    from: Planar,
    to: Planar,
    /// Centroid reference at the start and end of double support.
    com_from: Planar,
    com_to: Planar,
}

#[derive(Debug, Clone)]
enum Script {
    Stand {
        feet: [Planar; 2],
        com: Planar,
    },
    Walk {
        params: WalkParams,
        cycles: Vec<Cycle>,
        final_feet: [Planar; 2],
        final_com_from: Planar,
        final_com: Planar,
    },
    Multicontact {
        feet: [Planar; 2],
        com: Planar,
        hand: RestPose,
    },
    Freefall,
}

#[derive(Debug, Clone)]
pub struct GaitScript {
    limbs: Vec<LimbKind>,
    height: f64,
    script: Script,
}

impl GaitScript {
    pub fn new(sc: &SimScenario) -> Self {
        let w = sc.foot_half_width;
        let feet = [
            Planar {
                xy: Vector2::new(0.0, w),
                yaw: 0.0,
            },
            Planar {
                xy: Vector2::new(0.0, -w),
                yaw: 0.0,
            },
        ];
        let com = Planar {
            xy: Vector2::zeros(),
            yaw: 0.0,
        };
        let (limbs, script) = match &sc.gait {
            Gait::Stand => (vec![LimbKind::Foot; 2], Script::Stand { feet, com }),
            Gait::Walk(p) => (vec![LimbKind::Foot; 2], walk_script(p, w)),
            Gait::Multicontact(HandParams { position, .. }) => {
                let hand = RestPose::new(
                    Vector3::new(0.0, 0.0, sc.com_height) + Vector3::from(*position),
                    Rotation::identity(),
                );
                (
                    vec![LimbKind::Foot, LimbKind::Foot, LimbKind::Hand],
                    Script::Multicontact { feet, com, hand },
                )
            }
            Gait::Freefall => (Vec::new(), Script::Freefall),
        };
        Self {
            limbs,
            height: sc.com_height,
            script,
        }
    }

    pub fn limbs(&self) -> &[LimbKind] {
        &self.limbs
    }

    /// End time of the scripted motion; the plan is constant afterwards.
    pub fn motion_end(&self) -> f64 {
        match &self.script {
            Script::Walk { params, cycles, .. } => {
                cycles.len() as f64 * (params.double_support + params.single_support) + params.double_support
            }
            _ => 0.0,
        }
    }

    pub fn support_windows(&self) -> Vec<SupportWindow> {
        match &self.script {
            Script::Walk { params, cycles, .. } => {
                let tc = params.double_support + params.single_support;
                cycles
                    .iter()
                    .enumerate()
                    .map(|(i, c)| SupportWindow {
                        limb: 1 - c.swing,
                        start: i as f64 * tc + params.double_support,
                        end: (i + 1) as f64 * tc,
                    })
                    .collect()
            }
            _ => Vec::new(),
        }
    }

    fn body(&self, com: &Planar) -> (Vector3<f64>, Rotation) {
        (
            Vector3::new(com.xy.x, com.xy.y, self.height),
            Rotation::about_z(com.yaw),
        )
    }

    fn stance(p: &Planar) -> LimbPlan {
        LimbPlan {
            desired: p.pose(0.0),
            phase: Phase::Stance,
        }
    }

    /// Plan at time `t`; times before zero use the initial plan.
    pub fn plan(&self, t: f64) -> Plan {
        let t = t.max(0.0);
        match &self.script {
            Script::Stand { feet, com } => {
                let (p, r) = self.body(com);
                Plan {
                    body_position: p,
                    body_orientation: r,
                    limbs: feet.iter().map(Self::stance).collect(),
                }
            }
            Script::Multicontact { feet, com, hand } => {
                let (p, r) = self.body(com);
                let mut limbs: Vec<_> = feet.iter().map(Self::stance).collect();
                limbs.push(LimbPlan {
                    desired: *hand,
                    phase: Phase::Stance,
                });
                Plan {
                    body_position: p,
                    body_orientation: r,
                    limbs,
                }
            }
            Script::Freefall => {
                let (p, r) = self.body(&Planar {
                    xy: Vector2::zeros(),
                    yaw: 0.0,
                });
                Plan {
                    body_position: p,
                    body_orientation: r,
                    limbs: Vec::new(),
                }
            }
            Script::Walk {
                params,
                cycles,
                final_feet,
                final_com_from,
                final_com,
            } => {
                let tc = params.double_support + params.single_support;
                let i = (t / tc).floor() as usize;
                if i >= cycles.len() {
                    let s = cosine_blend((t - cycles.len() as f64 * tc) / params.double_support);
                    let (p, r) = self.body(&final_com_from.lerp(final_com, s));
                    return Plan {
                        body_position: p,
                        body_orientation: r,
                        limbs: final_feet.iter().map(Self::stance).collect(),
                    };
                }
                let c = &cycles[i];
                let local = t - i as f64 * tc;
                let com = c.com_from.lerp(&c.com_to, cosine_blend(local / params.double_support));
                let (p, r) = self.body(&com);
                let mut limbs = vec![Self::stance(&c.from); 2];
                limbs[1 - c.swing] = Self::stance(&c.stance);
                if local > params.double_support {
                    let tau = (local - params.double_support) / params.single_support;
                    let horizontal = c.from.lerp(&c.to, smoothstep(tau / 0.8));
                    let z = params.clearance * 0.5 * (1.0 - (2.0 * PI * tau).cos());
                    limbs[c.swing] = LimbPlan {
                        desired: horizontal.pose(z),
                        phase: Phase::Swing { landing: tau > 0.5 },
                    };
                }
                Plan {
                    body_position: p,
                    body_orientation: r,
                    limbs,
                }
            }
        }
    }
}

fn walk_script(p: &WalkParams, half_width: f64) -> Script {
    let mut frames = vec![Planar {
        xy: Vector2::zeros(),
        yaw: 0.0,
    }];
    for k in 0..p.steps {
        let prev = frames[k];
        let yaw = prev.yaw + p.turn;
        let next = Planar { xy: prev.xy, yaw };
        frames.push(Planar {
            xy: next.offset(Vector2::new(p.step_length, p.lateral)),
            yaw,
        });
    }
    let place = |frame: &Planar, foot: usize| {
        let side = if foot == 0 { half_width } else { -half_width };
        Planar {
            xy: frame.offset(Vector2::new(0.0, side)),
            yaw: frame.yaw,
        }
    };
    let mut feet = [place(&frames[0], 0), place(&frames[0], 1)];
    let mut com = Planar {
        xy: Vector2::zeros(),
        yaw: 0.0,
    };
    let mut cycles = Vec::with_capacity(p.steps);
    for i in 0..p.steps {
        let swing = i % 2;
        let stance = feet[1 - swing];
        let to = place(&frames[i + 1], swing);
        let com_to = Planar {
            xy: stance.xy,
            yaw: 0.5 * (feet[0].yaw + feet[1].yaw),
        };
        cycles.push(Cycle {
            swing,
            stance,
            from: feet[swing],
            to,
            com_from: com,
            com_to,
        });
        feet[swing] = to;
        com = com_to;
    }
    let final_com = Planar {
        xy: 0.5 * (feet[0].xy + feet[1].xy),
        yaw: 0.5 * (feet[0].yaw + feet[1].yaw),
    };
    Script::Walk {
        params: p.clone(),
        cycles,
        final_feet: feet,
        final_com_from: com,
        final_com,
    }
}
