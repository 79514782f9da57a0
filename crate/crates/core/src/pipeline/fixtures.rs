//! Synthetic assemblies with known solutions.
//!
//! Coordinates are already in planner units (inside the 10-unit cube) and every mesh is
//! subdivided to the 0.5 edge limit, so fixtures can be planned without preprocessing.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use nalgebra::Point3;

use crate::geometry::primitives::{box_union, icosphere};
use crate::geometry::{subdivide, TriMesh};
use crate::model::Assembly;
use crate::part::MassModel;

use super::MAX_EDGE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FixtureKind {
    /// Square peg in a through hole, 0.1 clearance, exits along +z.
    PegPlate,
    /// Square ring on a 9-unit post, 0.05 clearance per side.
    RingShaft,
    /// Block in an L-shaped tunnel: slide +x, then up a shaft.
    LChannel,
    /// Key whose crossbar must turn a quarter turn before lifting out of a slot.
    TwistLock,
    /// C-shaped cap clamps a base and the pin sitting in the base's bore.
    CapPinBase,
    /// Latch A, bolt B and frame C: only A turning while B lifts frees anything.
    Interlock,
    /// Cube sealed inside a hollow box.
    ClosedBox,
    /// L-channel block whose exit shaft is plugged by a cover.
    CoveredChannel,
    /// Two lidded boxes with loose cubes, an L-channel block and a shared base.
    SixPart,
    /// Two parts hooked together inside an open channel.
    WeldedPair,
    /// Ball resting in a square well.
    SphereSocket,
    /// Three loose cubes on a plate.
    FreeCubes,
}

impl FixtureKind {
    pub const ALL: [FixtureKind; 12] = [
        FixtureKind::PegPlate,
        FixtureKind::RingShaft,
        FixtureKind::LChannel,
        FixtureKind::TwistLock,
        FixtureKind::CapPinBase,
        FixtureKind::Interlock,
        FixtureKind::ClosedBox,
        FixtureKind::CoveredChannel,
        FixtureKind::SixPart,
        FixtureKind::WeldedPair,
        FixtureKind::SphereSocket,
        FixtureKind::FreeCubes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FixtureKind::PegPlate => "peg-plate",
            FixtureKind::RingShaft => "ring-shaft",
            FixtureKind::LChannel => "l-channel",
            FixtureKind::TwistLock => "twist-lock",
            FixtureKind::CapPinBase => "cap-pin-base",
            FixtureKind::Interlock => "interlock",
            FixtureKind::ClosedBox => "closed-box",
            FixtureKind::CoveredChannel => "covered-channel",
            FixtureKind::SixPart => "six-part",
            FixtureKind::WeldedPair => "welded-pair",
            FixtureKind::SphereSocket => "sphere-socket",
            FixtureKind::FreeCubes => "free-cubes",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

type Box3 = (Point3<f64>, Point3<f64>);

fn bx(x0: f64, x1: f64, y0: f64, y1: f64, z0: f64, z1: f64) -> Box3 {
    (Point3::new(x0, y0, z0), Point3::new(x1, y1, z1))
}

/// Square frame in the xy plane: outer half-size `o`, inner half-size `i`, centered at (cx, cy).
fn square_ring(cx: f64, cy: f64, o: [f64; 2], i: [f64; 2], z0: f64, z1: f64) -> Vec<Box3> {
    vec![
        bx(cx - o[0], cx - i[0], cy - o[1], cy + o[1], z0, z1),
        bx(cx + i[0], cx + o[0], cy - o[1], cy + o[1], z0, z1),
        bx(cx - i[0], cx + i[0], cy - o[1], cy - i[1], z0, z1),
        bx(cx - i[0], cx + i[0], cy + i[1], cy + o[1], z0, z1),
    ]
}

fn part(name: &str, boxes: &[Box3]) -> (String, TriMesh) {
    (name.to_string(), subdivide(&box_union(boxes), MAX_EDGE))
}

/// Named part meshes of a fixture, in part-id order.
pub fn fixture_meshes(kind: FixtureKind) -> Vec<(String, TriMesh)> {
    match kind {
        FixtureKind::PegPlate => vec![
            part("peg", &[bx(-0.5, 0.5, -0.5, 0.5, 0.0, 2.5)]),
            part("plate", &square_ring(0.0, 0.0, [2.0, 2.0], [0.55, 0.55], 0.0, 1.0)),
        ],
        FixtureKind::RingShaft => vec![
            part("ring", &square_ring(0.0, 0.0, [1.0, 1.0], [0.45, 0.45], 0.3, 0.8)),
            part("shaft", &[bx(-2.0, 2.0, -2.0, 2.0, -0.5, 0.0), bx(-0.4, 0.4, -0.4, 0.4, 0.0, 9.0)]),
        ],
        FixtureKind::LChannel => vec![
            part("block", &[bx(0.55, 1.55, -0.5, 0.5, 0.55, 1.55)]),
            part("channel", &l_channel_boxes()),
        ],
        FixtureKind::CoveredChannel => vec![
            part("block", &[bx(0.55, 1.55, -0.5, 0.5, 0.55, 1.55)]),
            part("cover", &[bx(3.45, 4.45, -0.55, 0.55, 1.65, 2.9)]),
            part("channel", &l_channel_boxes()),
        ],
        FixtureKind::TwistLock => {
            let mut socket = vec![bx(-1.5, 1.5, -1.5, 1.5, 0.0, 0.3)];
            socket.extend(square_ring(0.0, 0.0, [1.5, 1.5], [0.95, 0.95], 0.3, 0.9));
            socket.push(bx(0.25, 0.95, 0.25, 0.95, 0.3, 0.9));
            socket.push(bx(-0.95, -0.25, -0.95, -0.25, 0.3, 0.9));
            socket.extend(square_ring(0.0, 0.0, [1.5, 1.5], [0.9, 0.3], 0.9, 1.3));
            vec![
                part("key", &[bx(-0.2, 0.2, -0.8, 0.8, 0.4, 0.8), bx(-0.15, 0.15, -0.15, 0.15, 0.8, 2.0)]),
                part("socket", &socket),
            ]
        }
        FixtureKind::CapPinBase => {
            let mut base = vec![bx(-1.5, 1.5, -1.5, 1.5, 0.0, 0.47)];
            base.extend(square_ring(0.0, 0.0, [1.5, 1.5], [0.43, 0.43], 0.47, 8.5));
            vec![
                part("pin", &[bx(-0.4, 0.4, -0.4, 0.4, 0.5, 8.5)]),
                part("base", &base),
                part(
                    "cap",
                    &[
                        bx(1.53, 2.03, -1.0, 1.0, -0.03, 8.53),
                        bx(-1.0, 2.03, -1.0, 1.0, 8.53, 9.03),
                        bx(-1.0, 2.03, -1.0, 1.0, -0.53, -0.03),
                    ],
                ),
            ]
        }
        FixtureKind::Interlock => {
            let mut frame = vec![bx(-1.5, 1.5, -1.5, 1.5, 0.0, 0.2)];
            frame.extend(square_ring(0.0, 0.0, [1.5, 1.5], [0.53, 0.33], 0.2, 0.4));
            frame.extend(square_ring(0.0, 0.0, [1.5, 1.5], [1.1, 1.1], 0.4, 1.2));
            frame.push(bx(0.45, 1.1, 0.45, 1.1, 0.4, 1.2));
            frame.push(bx(-1.1, -0.45, -1.1, -0.45, 0.4, 1.2));
            frame.extend(square_ring(0.0, 0.0, [1.5, 1.5], [0.97, 0.45], 1.2, 1.6));
            vec![
                part("latch", &square_ring(0.0, 0.0, [0.35, 0.9], [0.18, 0.18], 0.75, 1.15)),
                part(
                    "bolt",
                    &[
                        bx(-0.5, 0.5, -0.3, 0.3, 0.23, 0.7),
                        bx(-0.1, 0.1, -0.1, 0.1, 0.7, 1.65),
                        bx(-0.3, 0.3, -0.3, 0.3, 1.65, 1.95),
                    ],
                ),
                part("frame", &frame),
            ]
        }
        FixtureKind::ClosedBox => vec![
            part("inner", &[bx(-0.5, 0.5, -0.5, 0.5, -0.5, 0.5)]),
            part(
                "shell",
                &[
                    bx(-1.5, 1.5, -1.5, 1.5, -1.5, -1.0),
                    bx(-1.5, 1.5, -1.5, 1.5, 1.0, 1.5),
                    bx(-1.5, -1.0, -1.5, 1.5, -1.0, 1.0),
                    bx(1.0, 1.5, -1.5, 1.5, -1.0, 1.0),
                    bx(-1.0, 1.0, -1.5, -1.0, -1.0, 1.0),
                    bx(-1.0, 1.0, 1.0, 1.5, -1.0, 1.0),
                ],
            ),
        ],
        FixtureKind::SixPart => {
            let mut base = vec![bx(0.0, 9.0, -2.0, 2.0, 0.0, 0.5)];
            base.extend(square_ring(1.5, 0.0, [1.5, 2.0], [1.0, 1.0], 0.5, 1.5));
            base.extend(square_ring(7.5, 0.0, [1.5, 2.0], [1.0, 1.0], 0.5, 1.5));
            base.extend([
                bx(3.0, 6.0, -2.0, -0.6, 0.5, 2.5),
                bx(3.0, 6.0, 0.6, 2.0, 0.5, 2.5),
                bx(3.0, 3.5, -0.6, 0.6, 0.5, 2.5),
                bx(5.5, 6.0, -0.6, 0.6, 0.5, 2.5),
                bx(3.5, 4.4, -0.6, 0.6, 1.6, 2.5),
            ]);
            vec![
                part("cube-a", &[bx(0.8, 2.2, -0.7, 0.7, 0.55, 1.25)]),
                part("cube-b", &[bx(6.8, 8.2, -0.7, 0.7, 0.55, 1.25)]),
                part("block", &[bx(3.55, 4.55, -0.5, 0.5, 0.55, 1.55)]),
                part("lid-a", &[bx(0.2, 2.8, -1.3, 1.3, 1.55, 1.85)]),
                part("lid-b", &[bx(6.2, 8.8, -1.3, 1.3, 1.55, 1.85)]),
                part("base", &base),
            ]
        }
        FixtureKind::WeldedPair => {
            let mut frame = vec![bx(-1.5, 1.5, -1.1, 1.1, 0.0, 0.5)];
            frame.extend(square_ring(0.0, 0.0, [1.5, 1.1], [1.0, 0.6], 0.5, 3.0));
            vec![
                part("left", &[bx(-0.95, -0.02, -0.55, 0.55, 0.55, 1.5), bx(-0.02, 0.4, -0.3, 0.3, 0.9, 1.1)]),
                part(
                    "right",
                    &[
                        bx(0.03, 0.95, -0.55, 0.55, 0.55, 0.85),
                        bx(0.03, 0.95, -0.55, 0.55, 1.15, 1.5),
                        bx(0.45, 0.95, -0.55, 0.55, 0.85, 1.15),
                        bx(0.03, 0.45, -0.55, -0.35, 0.85, 1.15),
                        bx(0.03, 0.45, 0.35, 0.55, 0.85, 1.15),
                    ],
                ),
                part("frame", &frame),
            ]
        }
        FixtureKind::SphereSocket => {
            let mut socket = vec![bx(-1.5, 1.5, -1.5, 1.5, 0.0, 0.5)];
            socket.extend(square_ring(0.0, 0.0, [1.5, 1.5], [0.55, 0.55], 0.5, 2.0));
            vec![
                ("ball".to_string(), subdivide(&icosphere(Point3::new(0.0, 0.0, 1.05), 0.5, 2), MAX_EDGE)),
                part("socket", &socket),
            ]
        }
        FixtureKind::FreeCubes => vec![
            part("cube-0", &[bx(-2.5, -1.5, -0.5, 0.5, 0.05, 1.05)]),
            part("cube-1", &[bx(-0.5, 0.5, -0.5, 0.5, 0.05, 1.05)]),
            part("cube-2", &[bx(1.5, 2.5, -0.5, 0.5, 0.05, 1.05)]),
            part("plate", &[bx(-4.0, 4.0, -2.0, 2.0, -0.5, 0.0)]),
        ],
    }
}

fn l_channel_boxes() -> Vec<Box3> {
    vec![
        bx(0.0, 5.0, -1.0, 1.0, 0.0, 0.5),
        bx(0.0, 5.0, -1.0, -0.6, 0.5, 2.5),
        bx(0.0, 5.0, 0.6, 1.0, 0.5, 2.5),
        bx(0.0, 0.5, -0.6, 0.6, 0.5, 2.5),
        bx(4.5, 5.0, -0.6, 0.6, 0.5, 2.5),
        bx(0.5, 3.4, -0.6, 0.6, 1.6, 2.5),
    ]
}

/// A wall with a window, for free-space connection tests: the wall and a small cube
/// placed behind it.
pub fn wall_with_gap() -> Vec<(String, TriMesh)> {
    vec![
        part("cube", &[bx(-1.8, -1.2, -0.3, 0.3, 0.7, 1.3)]),
        part(
            "wall",
            &[
                bx(-0.1, 0.1, -3.0, 3.0, 0.0, 0.5),
                bx(-0.1, 0.1, -3.0, 3.0, 1.5, 3.0),
                bx(-0.1, 0.1, -3.0, -0.6, 0.5, 1.5),
                bx(-0.1, 0.1, 0.6, 3.0, 0.5, 1.5),
            ],
        ),
    ]
}

/// Built assembly for a fixture, memoised per process.
pub fn fixture_assembly(kind: FixtureKind) -> Assembly {
    static CACHE: OnceLock<Mutex<HashMap<FixtureKind, Assembly>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(a) = cache.lock().expect("fixture cache").get(&kind) {
        return a.clone();
    }
    let a = Assembly::from_meshes(fixture_meshes(kind), &MassModel::default(), None).expect("fixture meshes are valid");
    cache.lock().expect("fixture cache").insert(kind, a.clone());
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_fixture_meshes_are_closed_and_fine() {
        for kind in FixtureKind::ALL {
            for (name, m) in fixture_meshes(kind) {
                m.watertight_diagnostic().unwrap_or_else(|e| panic!("{} {name}: {e}", kind.name()));
                assert!(m.max_edge_length() <= MAX_EDGE + 1e-12);
                assert!(m.volume() > 0.0, "{} {name}", kind.name());
            }
        }
        for (_, m) in wall_with_gap() {
            m.watertight_diagnostic().unwrap();
        }
    }

    #[test]
    fn fixtures_have_no_initial_overlap() {
        for kind in FixtureKind::ALL {
            let a = fixture_assembly(kind);
            assert!(a.initial_penetrations().is_empty(), "{}: {:?}", kind.name(), a.initial_penetrations());
        }
    }

    #[test]
    fn names_round_trip() {
        for kind in FixtureKind::ALL {
            assert_eq!(FixtureKind::from_name(kind.name()), Some(kind));
        }
    }
}
