//! Rigid bodies pushed by actions against vertex-vs-SDF penalty contacts.
//!
//! A state is the offset of a part from its assembled pose: a world point `x0` of the
//! assembled mesh moves to `q * (x0 - com) + com + t`.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Matrix6, Point3, Translation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::part::PartGeometry;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulation diverged for part {part}: |t| = {magnitude}")]
    Diverged { part: usize, magnitude: f64 },
    #[error("snapshot dump failed: {0}")]
    Dump(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidState {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub linear_velocity: Vector3<f64>,
    /// Body frame.
    pub angular_velocity: Vector3<f64>,
}

impl Default for RigidState {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidState {
    /// The assembled pose.
    pub fn identity() -> Self {
        Self::at(Vector3::zeros(), UnitQuaternion::identity())
    }

    pub fn at(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self { translation, rotation, linear_velocity: Vector3::zeros(), angular_velocity: Vector3::zeros() }
    }

    pub fn translated(translation: Vector3<f64>) -> Self {
        Self::at(translation, UnitQuaternion::identity())
    }

    /// Same pose, zero velocity.
    pub fn at_rest(&self) -> Self {
        Self::at(self.translation, self.rotation)
    }

    /// Rigid map from assembled-frame points to current world points.
    pub fn isometry(&self, com: &Point3<f64>) -> Isometry3<f64> {
        let shift = com.coords + self.translation - self.rotation * com.coords;
        Isometry3::from_parts(Translation3::from(shift), self.rotation)
    }

    pub fn transform_point(&self, com: &Point3<f64>, x0: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * (x0 - com) + com.coords + self.translation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Force,
    Torque,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    pub direction: Vector3<f64>,
    pub magnitude: f64,
}

impl Action {
    pub fn force(direction: Vector3<f64>, magnitude: f64) -> Self {
        Self { kind: ActionKind::Force, direction, magnitude }
    }

    pub fn torque(direction: Vector3<f64>, magnitude: f64) -> Self {
        Self { kind: ActionKind::Torque, direction, magnitude }
    }
}

/// A sampled vertex of a moving part at or below the contact threshold of another part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub point: Point3<f64>,
    /// `min(g, 0)`.
    pub penetration: f64,
    pub normal: Vector3<f64>,
    /// Time derivative of the signed distance along the normal.
    pub rate: f64,
    /// Tangential speed; kept for completeness, unused without friction.
    pub tangential_speed: f64,
    /// Index of the other body.
    pub other: usize,
}

/// Penalty force `(-k_n + k_d * rate) * d * n`.
pub fn contact_force(c: &Contact, k_n: f64, k_d: f64) -> Vector3<f64> {
    c.normal * ((-k_n + k_d * c.rate) * c.penetration)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub substep: f64,
    /// Multiplier applied to velocities after every substep; 1 disables damping.
    pub velocity_damping: f64,
    /// Vertices with `g` below this count as contacts.
    pub contact_threshold: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            contact_stiffness: 1e6,
            contact_damping: 0.0,
            substep: 1e-3,
            velocity_damping: 1.0,
            contact_threshold: 0.0,
        }
    }
}

/// Largest translation before a run is declared diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e4;

/// A body taking part in a simulation; non-dynamic bodies never move.
#[derive(Debug, Clone, Copy)]
pub struct SimBody<'a> {
    pub geometry: &'a PartGeometry,
    pub dynamic: bool,
}

struct Frame {
    rot: Matrix3<f64>,
    /// World position of the center of mass.
    center: Point3<f64>,
    com0: Point3<f64>,
    v: Vector3<f64>,
    w: Vector3<f64>,
    aabb_min: Point3<f64>,
    aabb_max: Point3<f64>,
}

fn frame(g: &PartGeometry, s: &RigidState) -> Frame {
    let rot = s.rotation.to_rotation_matrix().into_inner();
    let com0 = g.props.com;
    let center = com0 + s.translation;
    let mut lo = Point3::from(Vector3::repeat(f64::INFINITY));
    let mut hi = Point3::from(Vector3::repeat(f64::NEG_INFINITY));
    for c in g.bounds.corners() {
        let p = center + rot * (c - com0);
        lo = lo.inf(&p);
        hi = hi.sup(&p);
    }
    Frame { rot, center, com0, v: s.linear_velocity, w: rot * s.angular_velocity, aabb_min: lo, aabb_max: hi }
}

fn aabbs_overlap(a: &Frame, b: &Frame, margin: f64) -> bool {
    (0..3).all(|k| a.aabb_min[k] <= b.aabb_max[k] + margin && b.aabb_min[k] <= a.aabb_max[k] + margin)
}

/// Calls `f` for every vertex of `gi` whose signed distance to `gj` is below `threshold`.
fn for_each_contact(
    gi: &PartGeometry,
    fi: &Frame,
    gj: &PartGeometry,
    fj: &Frame,
    threshold: f64,
    mut f: impl FnMut(Point3<f64>, f64, Vector3<f64>, Vector3<f64>),
) {
    if !aabbs_overlap(fi, fj, threshold.max(0.0)) {
        return;
    }
    // Vertex in j's assembled frame: A * x0 + b.
    let a = fj.rot.transpose() * fi.rot;
    let b = fj.rot.transpose() * (fi.center - fj.center) + fj.com0.coords - a * fi.com0.coords;
    let reject = gj.bounds.expanded(threshold.max(0.0) + 1e-9);
    for x0 in &gi.mesh.vertices {
        let y = Point3::from(a * x0.coords + b);
        if !reject.contains(&y) {
            continue;
        }
        let g = gj.sdf.distance(&y);
        if g >= threshold {
            continue;
        }
        let grad = fj.rot * gj.sdf.gradient(&y);
        let x = fi.center + fi.rot * (x0 - fi.com0);
        f(x, g, grad, x - fi.center);
    }
}

fn point_velocity(fr: &Frame, x: &Point3<f64>) -> Vector3<f64> {
    fr.v + fr.w.cross(&(x - fr.center))
}

/// Contacts of `moving` against each of `others`, with `Contact::other` indexing `others`.
pub fn detect_contacts(
    moving: (&PartGeometry, &RigidState),
    others: &[(&PartGeometry, &RigidState)],
    threshold: f64,
) -> Vec<Contact> {
    let fi = frame(moving.0, moving.1);
    let mut out = Vec::new();
    for (j, (gj, sj)) in others.iter().enumerate() {
        let fj = frame(gj, sj);
        for_each_contact(moving.0, &fi, gj, &fj, threshold, |x, g, grad, _| {
            let Some(n) = grad.try_normalize(1e-12) else { return };
            let rel = point_velocity(&fi, &x) - point_velocity(&fj, &x);
            let rate = n.dot(&rel);
            out.push(Contact {
                point: x,
                penetration: g.min(0.0),
                normal: n,
                rate,
                tangential_speed: (rel - n * rate).norm(),
                other: j,
            });
        });
    }
    out
}

/// Deepest penetration `max(-g, 0)` of `a`'s vertices into `b`.
pub fn penetration_depth(a: (&PartGeometry, &RigidState), b: (&PartGeometry, &RigidState)) -> f64 {
    let (fa, fb) = (frame(a.0, a.1), frame(b.0, b.1));
    let mut deepest = 0.0f64;
    for_each_vertex_distance(a.0, &fa, b.0, &fb, 0.0, |g| deepest = deepest.max(-g));
    deepest
}

// Like `for_each_contact` but skips the gradient.
fn for_each_vertex_distance(gi: &PartGeometry, fi: &Frame, gj: &PartGeometry, fj: &Frame, threshold: f64, mut f: impl FnMut(f64)) {
    if !aabbs_overlap(fi, fj, threshold.max(0.0)) {
        return;
    }
    let a = fj.rot.transpose() * fi.rot;
    let b = fj.rot.transpose() * (fi.center - fj.center) + fj.com0.coords - a * fi.com0.coords;
    let reject = gj.bounds.expanded(threshold.max(0.0) + 1e-9);
    for x0 in &gi.mesh.vertices {
        let y = Point3::from(a * x0.coords + b);
        if reject.contains(&y) {
            let g = gj.sdf.distance(&y);
            if g < threshold {
                f(g);
            }
        }
    }
}

/// One penetrating vertex: `a` is the body owning the vertex, `b` the other body when it
/// is dynamic. Jacobians map body velocities to the rate of the signed distance.
struct ContactRow {
    a: usize,
    ja: Vector6<f64>,
    b: Option<(usize, Vector6<f64>)>,
    depth: f64,
}

// Contacts whose implicit normal force would pull are dropped and the step re-solved.
const MAX_ACTIVE_SET_ROUNDS: usize = 8;

fn add_block(m: &mut DMatrix<f64>, r: usize, c: usize, v: &Matrix6<f64>) {
    let mut view = m.fixed_view_mut::<6, 6>(6 * r, 6 * c);
    view += v;
}

fn jacobian(n: &Vector3<f64>, r: &Vector3<f64>) -> Vector6<f64> {
    let rn = r.cross(n);
    Vector6::new(n.x, n.y, n.z, rn.x, rn.y, rn.z)
}

/// Advances all dynamic bodies by `dt` in substeps of `params.substep`.
///
/// Velocities are zeroed on entry. Each substep is semi-implicit Euler with the contact
/// stiffness (and damping) treated implicitly, i.e. `(M + hD + h^2 K) u' = M u + h F`.
/// Contacts whose implicit force would come out adhesive are dropped and the substep is
/// solved again. Without contacts this is plain semi-implicit Euler.
pub fn simulate(
    bodies: &[SimBody<'_>],
    states: &mut [RigidState],
    actions: &[Option<Action>],
    dt: f64,
    params: &SimParams,
    mut dump: Option<&mut dyn Write>,
) -> Result<(), SimError> {
    assert_eq!(bodies.len(), states.len());
    assert_eq!(bodies.len(), actions.len());
    for (b, s) in bodies.iter().zip(states.iter_mut()) {
        if b.dynamic {
            *s = s.at_rest();
        }
    }
    let h = params.substep;
    let steps = (dt / h).round().max(1.0) as usize;
    let (kn, kd) = (params.contact_stiffness, params.contact_damping);
    // Position of each dynamic body in the coupled system.
    let slot: Vec<Option<usize>> = bodies
        .iter()
        .scan(0usize, |n, b| {
            Some(b.dynamic.then(|| {
                *n += 1;
                *n - 1
            }))
        })
        .collect();
    let dynamic: Vec<usize> = (0..bodies.len()).filter(|&i| bodies[i].dynamic).collect();
    let dim = 6 * dynamic.len();
    let mut rows: Vec<ContactRow> = Vec::new();
    for step in 0..steps {
        let frames: Vec<Frame> = bodies.iter().zip(states.iter()).map(|(b, s)| frame(b.geometry, s)).collect();
        rows.clear();
        for &i in &dynamic {
            for j in 0..bodies.len() {
                if i == j {
                    continue;
                }
                let (fi, fj) = (&frames[i], &frames[j]);
                for_each_contact(bodies[i].geometry, fi, bodies[j].geometry, fj, params.contact_threshold, |x, g, grad, ri| {
                    let depth = g.min(0.0);
                    if depth == 0.0 {
                        return;
                    }
                    let Some(n) = grad.try_normalize(1e-12) else { return };
                    let b = slot[j].map(|sj| (sj, jacobian(&-n, &(x - fj.center))));
                    rows.push(ContactRow { a: slot[i].expect("dynamic"), ja: jacobian(&n, &ri), b, depth });
                });
            }
        }

        let mut m = DMatrix::zeros(dim, dim);
        let mut u = DVector::zeros(dim);
        let mut free_rhs = DVector::zeros(dim);
        for (k, &i) in dynamic.iter().enumerate() {
            let fr = &frames[i];
            let props = &bodies[i].geometry.props;
            let (mut force, mut torque) = (Vector3::zeros(), Vector3::zeros());
            if let Some(act) = actions[i] {
                match act.kind {
                    ActionKind::Force => force += act.direction * act.magnitude,
                    ActionKind::Torque => torque += act.direction * act.magnitude,
                }
            }
            let inertia = fr.rot * props.inertia * fr.rot.transpose();
            torque -= fr.w.cross(&(inertia * fr.w));
            let mut mk = Matrix6::zeros();
            mk.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Matrix3::identity() * props.mass));
            mk.fixed_view_mut::<3, 3>(3, 3).copy_from(&inertia);
            let uk = Vector6::new(fr.v.x, fr.v.y, fr.v.z, fr.w.x, fr.w.y, fr.w.z);
            add_block(&mut m, k, k, &mk);
            u.fixed_rows_mut::<6>(6 * k).copy_from(&uk);
            free_rhs
                .fixed_rows_mut::<6>(6 * k)
                .copy_from(&(mk * uk + Vector6::new(force.x, force.y, force.z, torque.x, torque.y, torque.z) * h));
        }

        let mut active = vec![true; rows.len()];
        let mut next = u.clone();
        for _ in 0..MAX_ACTIVE_SET_ROUNDS {
            let mut lhs = m.clone();
            let mut rhs = free_rhs.clone();
            for (r, _) in rows.iter().zip(&active).filter(|(_, &on)| on) {
                let c = h * h * kn + h * kd * -r.depth;
                let push = h * kn * -r.depth;
                add_block(&mut lhs, r.a, r.a, &(r.ja * r.ja.transpose() * c));
                let mut seg = rhs.fixed_rows_mut::<6>(6 * r.a);
                seg += r.ja * push;
                if let Some((b, jb)) = r.b {
                    add_block(&mut lhs, b, b, &(jb * jb.transpose() * c));
                    add_block(&mut lhs, r.a, b, &(r.ja * jb.transpose() * c));
                    add_block(&mut lhs, b, r.a, &(jb * r.ja.transpose() * c));
                    let mut seg = rhs.fixed_rows_mut::<6>(6 * b);
                    seg += jb * push;
                }
            }
            next = match lhs.clone().cholesky() {
                Some(c) => c.solve(&rhs),
                None => lhs.lu().solve(&rhs).unwrap_or_else(|| u.clone()),
            };
            let mut changed = false;
            for (r, on) in rows.iter().zip(active.iter_mut()).filter(|(_, on)| **on) {
                let mut rate = r.ja.dot(&next.fixed_rows::<6>(6 * r.a));
                if let Some((b, jb)) = r.b {
                    rate += jb.dot(&next.fixed_rows::<6>(6 * b));
                }
                if kn * -r.depth - (h * kn + kd * -r.depth) * rate < 0.0 {
                    *on = false;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        for (k, &i) in dynamic.iter().enumerate() {
            let next = next.fixed_rows::<6>(6 * k) * params.velocity_damping;
            let v = Vector3::new(next[0], next[1], next[2]);
            let w = Vector3::new(next[3], next[4], next[5]);
            let s = &mut states[i];
            s.translation += v * h;
            let q = UnitQuaternion::from_scaled_axis(w * h) * s.rotation;
            s.rotation = UnitQuaternion::new_normalize(q.into_inner());
            s.linear_velocity = v;
            s.angular_velocity = s.rotation.inverse() * w;
            let mag = s.translation.norm();
            let finite = s.translation.iter().chain(s.rotation.coords.iter()).chain(next.iter()).all(|x| x.is_finite());
            if !finite || mag > DIVERGENCE_LIMIT {
                return Err(SimError::Diverged { part: i, magnitude: mag });
            }
        }
        if let Some(w) = dump.as_deref_mut() {
            for (i, (b, s)) in bodies.iter().zip(states.iter()).enumerate() {
                if b.dynamic {
                    let (t, q) = (s.translation, s.rotation.coords);
                    writeln!(w, "{step} {i} {:?} {:?} {:?} {:?} {:?} {:?} {:?}", t.x, t.y, t.z, q.w, q.x, q.y, q.z)?;
                }
            }
        }
    }
    Ok(())
}
