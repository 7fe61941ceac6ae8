//! Skeleton data model, keypoint file parsing, and pose-map rasterization.
//!
//! A skeleton is an ordered list of 2D joints with confidences, bound to a
//! [`SkeletonTopology`] that names the line-segment parts connecting them.
//! Rasterizing a skeleton produces a [`PoseMap`]: one binary channel per
//! part, which is the conditioning input consumed by the generator.
//!
//! # Keypoint file format (`.p2vk`, version 1)
//!
//! Plain text, line oriented:
//!
//! ```text
//! p2v-keypoints v1
//! joint_count <n>
//! fps <fps>
//! source_resolution <width> <height>
//! frame 0
//! <x> <y> <confidence>        (exactly joint_count lines)
//! frame 1
//! ...
//! ```
//!
//! Coordinates are pixels in the source resolution. Floats serialize with
//! Rust's shortest round-trip formatting, so parse -> serialize -> parse is
//! an identity on the decoded values.

use crate::error::{Error, Result};
use ndarray::Array3;

/// One detected joint. `confidence == 0` marks the joint as undetected and
/// all consumers ignore its coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub confidence: f32,
}

impl Keypoint {
    pub fn new(x: f32, y: f32, confidence: f32) -> Self {
        Keypoint {
            x,
            y,
            confidence: confidence.clamp(0.0, 1.0),
        }
    }

    pub fn detected(&self) -> bool {
        self.confidence > 0.0
    }
}

/// Connectivity of a skeleton: which joint pairs form drawable parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTopology {
    joint_count: usize,
    parts: Vec<(usize, usize)>,
    part_names: Vec<String>,
    /// Joint that anchors the kinematic tree (used by limb scaling).
    root_joint: usize,
    /// Parts eligible for limb-length augmentation.
    limb_parts: Vec<usize>,
}

impl SkeletonTopology {
    pub fn new(
        joint_count: usize,
        parts: Vec<(usize, usize)>,
        part_names: Vec<String>,
        root_joint: usize,
        limb_parts: Vec<usize>,
    ) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Topology("topology needs at least one part".into()));
        }
        if parts.len() != part_names.len() {
            return Err(Error::Topology(format!(
                "{} parts but {} part names",
                parts.len(),
                part_names.len()
            )));
        }
        if root_joint >= joint_count {
            return Err(Error::Topology(format!(
                "root joint {root_joint} out of range for {joint_count} joints"
            )));
        }
        for (i, &(a, b)) in parts.iter().enumerate() {
            if a >= joint_count || b >= joint_count {
                return Err(Error::Topology(format!(
                    "part {i} ({a},{b}) references a joint >= joint_count {joint_count}"
                )));
            }
        }
        for i in 0..parts.len() {
            for j in (i + 1)..parts.len() {
                let (a, b) = parts[i];
                let (c, d) = parts[j];
                if (a, b) == (c, d) || (a, b) == (d, c) {
                    return Err(Error::Topology(format!("duplicate part pair {i} and {j}")));
                }
            }
        }
        for &p in &limb_parts {
            if p >= parts.len() {
                return Err(Error::Topology(format!("limb part index {p} out of range")));
            }
        }
        Ok(SkeletonTopology {
            joint_count,
            parts,
            part_names,
            root_joint,
            limb_parts,
        })
    }

    /// Default 15-joint body with 14 parts: head, clavicles, arms, spine,
    /// pelvis links, and legs. Arms and legs are limb-scalable.
    pub fn builtin_15() -> Self {
        let parts = vec![
            (0, 1),   // head
            (1, 2),   // r_clavicle
            (2, 3),   // r_upper_arm
            (3, 4),   // r_forearm
            (1, 5),   // l_clavicle
            (5, 6),   // l_upper_arm
            (6, 7),   // l_forearm
            (1, 8),   // spine
            (8, 9),   // r_pelvis
            (9, 10),  // r_thigh
            (10, 11), // r_shin
            (8, 12),  // l_pelvis
            (12, 13), // l_thigh
            (13, 14), // l_shin
        ];
        let names = [
            "head",
            "r_clavicle",
            "r_upper_arm",
            "r_forearm",
            "l_clavicle",
            "l_upper_arm",
            "l_forearm",
            "spine",
            "r_pelvis",
            "r_thigh",
            "r_shin",
            "l_pelvis",
            "l_thigh",
            "l_shin",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        SkeletonTopology::new(15, parts, names, 8, vec![2, 3, 5, 6, 9, 10, 12, 13])
            .expect("builtin topology is valid")
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    /// Number of parts, i.e. the channel count of rasterized pose maps.
    pub fn part_count(&self) -> usize {
        self.parts.len()
    }

    pub fn parts(&self) -> &[(usize, usize)] {
        &self.parts
    }

    pub fn part_names(&self) -> &[String] {
        &self.part_names
    }

    pub fn root_joint(&self) -> usize {
        self.root_joint
    }

    pub fn limb_parts(&self) -> &[usize] {
        &self.limb_parts
    }

    /// Parts containing the given joint.
    pub fn parts_of_joint(&self, joint: usize) -> Vec<usize> {
        self.parts
            .iter()
            .enumerate()
            .filter(|(_, &(a, b))| a == joint || b == joint)
            .map(|(i, _)| i)
            .collect()
    }

    /// Parent of each joint in the kinematic tree rooted at `root_joint`,
    /// derived from part connectivity by breadth-first search. `None` for the
    /// root and for joints unreachable from it.
    pub fn joint_parents(&self) -> Vec<Option<usize>> {
        let mut parent = vec![None; self.joint_count];
        let mut seen = vec![false; self.joint_count];
        let mut queue = std::collections::VecDeque::new();
        seen[self.root_joint] = true;
        queue.push_back(self.root_joint);
        while let Some(j) = queue.pop_front() {
            for &(a, b) in &self.parts {
                let other = if a == j {
                    b
                } else if b == j {
                    a
                } else {
                    continue;
                };
                if !seen[other] {
                    seen[other] = true;
                    parent[other] = Some(j);
                    queue.push_back(other);
                }
            }
        }
        parent
    }

    /// Joints in breadth-first order from the root; parents always precede
    /// children.
    pub fn joints_topological(&self) -> Vec<usize> {
        let parents = self.joint_parents();
        let mut order = vec![self.root_joint];
        let mut added = vec![false; self.joint_count];
        added[self.root_joint] = true;
        loop {
            let mut grew = false;
            for j in 0..self.joint_count {
                if !added[j] {
                    if let Some(p) = parents[j] {
                        if added[p] {
                            order.push(j);
                            added[j] = true;
                            grew = true;
                        }
                    }
                }
            }
            if !grew {
                break;
            }
        }
        order
    }
}

/// Per-frame skeleton: one keypoint per topology joint.
///
/// `dropped_parts` records parts suppressed by channel-dropout augmentation;
/// the rasterizer leaves those channels empty even when the joints they
/// connect are shared with surviving parts.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSkeleton {
    pub keypoints: Vec<Keypoint>,
    pub frame_index: usize,
    pub dropped_parts: Vec<usize>,
}

impl PoseSkeleton {
    pub fn new(keypoints: Vec<Keypoint>, frame_index: usize) -> Self {
        PoseSkeleton {
            keypoints,
            frame_index,
            dropped_parts: Vec::new(),
        }
    }

    pub fn validate(&self, topology: &SkeletonTopology) -> Result<()> {
        if self.keypoints.len() != topology.joint_count() {
            return Err(Error::Topology(format!(
                "frame {}: {} keypoints but topology expects {}",
                self.frame_index,
                self.keypoints.len(),
                topology.joint_count()
            )));
        }
        Ok(())
    }

    pub fn is_part_dropped(&self, part: usize) -> bool {
        self.dropped_parts.contains(&part)
    }
}

/// A parsed keypoint file: header plus one skeleton per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSequence {
    pub fps: f32,
    /// (width, height) of the source video the coordinates live in.
    pub source_resolution: (u32, u32),
    pub skeletons: Vec<PoseSkeleton>,
}

const KEYPOINT_MAGIC: &str = "p2v-keypoints v1";

/// Parse keypoint file content against a topology.
///
/// Confidences are clamped to [0, 1]. Frame indices must run 0, 1, 2, ...
/// and every frame must carry exactly `joint_count` joint lines.
pub fn parse_keypoints(raw: &str, topology: &SkeletonTopology) -> Result<KeypointSequence> {
    let mut lines = raw.lines().enumerate();

    let mut header_line = |what: &str| -> Result<(usize, String)> {
        for (n, line) in lines.by_ref() {
            let line = line.trim();
            if !line.is_empty() {
                return Ok((n + 1, line.to_string()));
            }
        }
        Err(Error::parse("end of file", format!("missing {what}")))
    };

    let (n, magic) = header_line("magic line")?;
    if magic != KEYPOINT_MAGIC {
        return Err(Error::parse(
            format!("line {n}"),
            format!("expected `{KEYPOINT_MAGIC}`, found `{magic}`"),
        ));
    }
    let (n, jc_line) = header_line("joint_count")?;
    let joint_count: usize = parse_field(&jc_line, "joint_count", n)?;
    let (n, fps_line) = header_line("fps")?;
    let fps: f32 = parse_field(&fps_line, "fps", n)?;
    let (n, res_line) = header_line("source_resolution")?;
    let source_resolution = parse_resolution(&res_line, n)?;

    if joint_count != topology.joint_count() {
        return Err(Error::Topology(format!(
            "file declares joint_count {} but topology expects {}",
            joint_count,
            topology.joint_count()
        )));
    }

    let mut skeletons = Vec::new();
    let mut pending: Option<(usize, Vec<Keypoint>)> = None;
    for (n, line) in lines {
        let line_no = n + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("frame ") {
            if let Some((idx, kps)) = pending.take() {
                finish_frame(idx, kps, joint_count, &mut skeletons)?;
            }
            let idx: usize = rest.trim().parse().map_err(|_| {
                Error::parse(format!("line {line_no}"), format!("bad frame index `{rest}`"))
            })?;
            if idx != skeletons.len() {
                return Err(Error::parse(
                    format!("line {line_no}"),
                    format!("frame index {idx} out of order, expected {}", skeletons.len()),
                ));
            }
            pending = Some((idx, Vec::with_capacity(joint_count)));
        } else {
            let (idx, kps) = pending.as_mut().ok_or_else(|| {
                Error::parse(
                    format!("line {line_no}"),
                    "joint line before any `frame` marker".to_string(),
                )
            })?;
            let mut it = line.split_whitespace();
            let mut field = |name: &str| -> Result<f32> {
                it.next()
                    .ok_or_else(|| {
                        Error::parse(
                            format!("line {line_no} (frame {idx}, joint {})", kps.len()),
                            format!("missing {name}"),
                        )
                    })?
                    .parse()
                    .map_err(|_| {
                        Error::parse(
                            format!("line {line_no} (frame {idx}, joint {})", kps.len()),
                            format!("bad {name}"),
                        )
                    })
            };
            let x = field("x")?;
            let y = field("y")?;
            let confidence = field("confidence")?;
            if it.next().is_some() {
                return Err(Error::parse(
                    format!("line {line_no} (frame {idx}, joint {})", kps.len()),
                    "trailing fields after confidence".to_string(),
                ));
            }
            kps.push(Keypoint::new(x, y, confidence));
            if kps.len() > joint_count {
                return Err(Error::Topology(format!(
                    "frame {idx}: more than {joint_count} joint records"
                )));
            }
        }
    }
    if let Some((idx, kps)) = pending.take() {
        finish_frame(idx, kps, joint_count, &mut skeletons)?;
    }

    Ok(KeypointSequence {
        fps,
        source_resolution,
        skeletons,
    })
}

fn finish_frame(
    idx: usize,
    kps: Vec<Keypoint>,
    joint_count: usize,
    out: &mut Vec<PoseSkeleton>,
) -> Result<()> {
    if kps.len() != joint_count {
        return Err(Error::Topology(format!(
            "frame {idx}: {} joint records, expected {joint_count}",
            kps.len()
        )));
    }
    out.push(PoseSkeleton::new(kps, idx));
    Ok(())
}

fn parse_field<T: std::str::FromStr>(line: &str, key: &str, line_no: usize) -> Result<T> {
    let rest = line.strip_prefix(key).ok_or_else(|| {
        Error::parse(format!("line {line_no}"), format!("expected `{key}`, found `{line}`"))
    })?;
    rest.trim()
        .parse()
        .map_err(|_| Error::parse(format!("line {line_no}"), format!("bad {key} value")))
}

fn parse_resolution(line: &str, line_no: usize) -> Result<(u32, u32)> {
    let rest = line.strip_prefix("source_resolution").ok_or_else(|| {
        Error::parse(
            format!("line {line_no}"),
            format!("expected `source_resolution`, found `{line}`"),
        )
    })?;
    let mut it = rest.split_whitespace();
    let w = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::parse(format!("line {line_no}"), "bad width"))?;
    let h = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::parse(format!("line {line_no}"), "bad height"))?;
    Ok((w, h))
}

/// Serialize a keypoint sequence back into file content.
pub fn serialize_keypoints(seq: &KeypointSequence, topology: &SkeletonTopology) -> String {
    let mut out = String::new();
    out.push_str(KEYPOINT_MAGIC);
    out.push('\n');
    out.push_str(&format!("joint_count {}\n", topology.joint_count()));
    out.push_str(&format!("fps {}\n", seq.fps));
    out.push_str(&format!(
        "source_resolution {} {}\n",
        seq.source_resolution.0, seq.source_resolution.1
    ));
    for sk in &seq.skeletons {
        out.push_str(&format!("frame {}\n", sk.frame_index));
        for kp in &sk.keypoints {
            out.push_str(&format!("{} {} {}\n", kp.x, kp.y, kp.confidence));
        }
    }
    out
}

/// Rasterized skeleton: one binary channel per topology part, stored (c, h, w).
#[derive(Debug, Clone, PartialEq)]
pub struct PoseMap {
    data: Array3<f32>,
}

impl PoseMap {
    pub fn from_array(data: Array3<f32>) -> Self {
        PoseMap { data }
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn get(&self, channel: usize, y: usize, x: usize) -> f32 {
        self.data[[channel, y, x]]
    }
}

/// Draw each part as a line segment dilated to `thickness` pixels.
///
/// A pixel (x, y) is covered in channel `c` when the distance from its
/// center to part `c`'s segment is at most `thickness / 2`. Values are hard
/// 0/1 so the rasterizer can be checked pixel-exactly against a brute-force
/// distance oracle. Parts with an undetected endpoint, and parts listed in
/// the skeleton's `dropped_parts`, leave their channel all zero. Geometry is
/// not altered by the canvas: off-canvas endpoints simply clip to the
/// visible region.
pub fn rasterize_pose_map(
    skeleton: &PoseSkeleton,
    topology: &SkeletonTopology,
    resolution: (usize, usize),
    thickness: f32,
) -> Result<PoseMap> {
    skeleton.validate(topology)?;
    let (h, w) = resolution;
    if h == 0 || w == 0 {
        return Err(Error::Shape(format!("empty canvas {h}x{w}")));
    }
    if thickness < 1.0 {
        return Err(Error::Config(format!("thickness {thickness} < 1")));
    }
    let mut data = Array3::<f32>::zeros((topology.part_count(), h, w));
    let radius = f64::from(thickness) / 2.0;
    for (c, &(ja, jb)) in topology.parts().iter().enumerate() {
        if skeleton.is_part_dropped(c) {
            continue;
        }
        let a = skeleton.keypoints[ja];
        let b = skeleton.keypoints[jb];
        if !a.detected() || !b.detected() {
            continue;
        }
        let (ax, ay) = (f64::from(a.x), f64::from(a.y));
        let (bx, by) = (f64::from(b.x), f64::from(b.y));
        // Scan only the segment's bounding box intersected with the canvas.
        let x_min = (ax.min(bx) - radius).floor().max(0.0) as usize;
        let x_max = (ax.max(bx) + radius).ceil().min((w - 1) as f64) as usize;
        let y_min = (ay.min(by) - radius).floor().max(0.0) as usize;
        let y_max = (ay.max(by) + radius).ceil().min((h - 1) as f64) as usize;
        if (ax.max(bx) + radius) < 0.0 || (ay.max(by) + radius) < 0.0 {
            continue;
        }
        if (ax.min(bx) - radius) > (w - 1) as f64 || (ay.min(by) - radius) > (h - 1) as f64 {
            continue;
        }
        for y in y_min..=y_max {
            for x in x_min..=x_max {
                let d2 = dist2_point_segment(x as f64, y as f64, ax, ay, bx, by);
                if d2 <= radius * radius {
                    data[[c, y, x]] = 1.0;
                }
            }
        }
    }
    Ok(PoseMap::from_array(data))
}

/// Squared distance from point (px, py) to segment (ax, ay)-(bx, by).
pub fn dist2_point_segment(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let abx = bx - ax;
    let aby = by - ay;
    let len2 = abx * abx + aby * aby;
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((px - ax) * abx + (py - ay) * aby) / len2
    }
    .clamp(0.0, 1.0);
    let dx = px - (ax + t * abx);
    let dy = py - (ay + t * aby);
    dx * dx + dy * dy
}

/// Default pose-map line thickness: 4 px at 256-pixel height, scaled
/// proportionally, never below 1.
pub fn default_thickness(height: usize) -> f32 {
    (4.0 * height as f32 / 256.0).max(1.0)
}

/// Axis-aligned rectangle in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f32,
    pub y0: f32,
    pub x1: f32,
    pub y1: f32,
}

impl Rect {
    pub fn width(&self) -> f32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f32 {
        self.y1 - self.y0
    }

    /// Smallest rectangle containing both.
    pub fn union(&self, other: &Rect) -> Rect {
        Rect {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }
}

/// Tight bounding box over confident keypoints, expanded on every edge by
/// `margin_fraction` of the box's larger side, clipped to the frame.
pub fn pose_bbox(
    skeleton: &PoseSkeleton,
    margin_fraction: f32,
    frame_size: (u32, u32),
) -> Result<Rect> {
    let mut x0 = f32::INFINITY;
    let mut y0 = f32::INFINITY;
    let mut x1 = f32::NEG_INFINITY;
    let mut y1 = f32::NEG_INFINITY;
    let mut any = false;
    for kp in &skeleton.keypoints {
        if kp.detected() {
            any = true;
            x0 = x0.min(kp.x);
            y0 = y0.min(kp.y);
            x1 = x1.max(kp.x);
            y1 = y1.max(kp.y);
        }
    }
    if !any {
        return Err(Error::NoPose {
            frame: skeleton.frame_index,
        });
    }
    let margin = margin_fraction * (x1 - x0).max(y1 - y0);
    let (w, h) = frame_size;
    Ok(Rect {
        x0: (x0 - margin).max(0.0),
        y0: (y0 - margin).max(0.0),
        x1: (x1 + margin).min(w as f32),
        y1: (y1 + margin).min(h as f32),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topo() -> SkeletonTopology {
        SkeletonTopology::builtin_15()
    }

    fn uniform_skeleton(n: usize, frame: usize) -> PoseSkeleton {
        PoseSkeleton::new(vec![Keypoint::new(1.0, 1.0, 1.0); n], frame)
    }

    fn sample_file(frames: usize, joints: usize) -> String {
        let mut s = String::from("p2v-keypoints v1\njoint_count 15\nfps 30\nsource_resolution 640 480\n");
        for f in 0..frames {
            s.push_str(&format!("frame {f}\n"));
            for j in 0..joints {
                s.push_str(&format!("{}.5 {}.25 0.9\n", j, j));
            }
        }
        s
    }

    #[test]
    fn parse_three_frames() {
        let seq = parse_keypoints(&sample_file(3, 15), &topo()).unwrap();
        assert_eq!(seq.skeletons.len(), 3);
        assert_eq!(seq.fps, 30.0);
        assert_eq!(seq.source_resolution, (640, 480));
        for (i, sk) in seq.skeletons.iter().enumerate() {
            assert_eq!(sk.frame_index, i);
            assert_eq!(sk.keypoints.len(), 15);
        }
    }

    #[test]
    fn parse_rejects_short_frame() {
        let err = parse_keypoints(&sample_file(1, 14), &topo()).unwrap_err();
        assert!(matches!(err, Error::Topology(_)), "{err}");
    }

    #[test]
    fn parse_clamps_confidence() {
        let mut s = String::from("p2v-keypoints v1\njoint_count 15\nfps 30\nsource_resolution 64 64\nframe 0\n");
        s.push_str("1 1 1.7\n");
        for _ in 1..15 {
            s.push_str("1 1 0.5\n");
        }
        let seq = parse_keypoints(&s, &topo()).unwrap();
        assert_eq!(seq.skeletons[0].keypoints[0].confidence, 1.0);
    }

    #[test]
    fn parse_error_names_frame_and_field() {
        let mut s = String::from("p2v-keypoints v1\njoint_count 15\nfps 30\nsource_resolution 64 64\nframe 0\n");
        s.push_str("1 1\n");
        let err = parse_keypoints(&s, &topo()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("frame 0"), "{msg}");
        assert!(msg.contains("confidence"), "{msg}");
    }

    #[test]
    fn round_trip_is_identity() {
        let topo = topo();
        let seq = parse_keypoints(&sample_file(4, 15), &topo).unwrap();
        let text = serialize_keypoints(&seq, &topo);
        let seq2 = parse_keypoints(&text, &topo).unwrap();
        assert_eq!(seq, seq2);
        // And once more, with awkward float values.
        let mut seq3 = seq;
        seq3.skeletons[0].keypoints[0] = Keypoint::new(0.1, 1.0 / 3.0, 0.123_456_79);
        seq3.fps = 29.97;
        let text3 = serialize_keypoints(&seq3, &topo);
        assert_eq!(parse_keypoints(&text3, &topo).unwrap(), seq3);
    }

    #[test]
    fn rasterize_horizontal_segment() {
        let topo = topo();
        let mut sk = uniform_skeleton(15, 0);
        for kp in &mut sk.keypoints {
            kp.confidence = 0.0;
        }
        // part 0 connects joints 0 and 1
        sk.keypoints[0] = Keypoint::new(1.0, 2.0, 1.0);
        sk.keypoints[1] = Keypoint::new(4.0, 2.0, 1.0);
        let map = rasterize_pose_map(&sk, &topo, (6, 6), 1.0).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                let expect = if y == 2 && (1..=4).contains(&x) { 1.0 } else { 0.0 };
                assert_eq!(map.get(0, y, x), expect, "pixel ({x},{y})");
            }
        }
        // all other channels empty: their endpoints are undetected
        for c in 1..topo.part_count() {
            assert_eq!(map.data().slice(ndarray::s![c, .., ..]).sum(), 0.0);
        }
    }

    #[test]
    fn rasterize_degenerate_point() {
        let topo = topo();
        let mut sk = uniform_skeleton(15, 0);
        for kp in &mut sk.keypoints {
            kp.confidence = 0.0;
        }
        sk.keypoints[0] = Keypoint::new(3.0, 3.0, 1.0);
        sk.keypoints[1] = Keypoint::new(3.0, 3.0, 1.0);
        let map = rasterize_pose_map(&sk, &topo, (6, 6), 1.0).unwrap();
        assert_eq!(map.get(0, 3, 3), 1.0);
        assert_eq!(map.data().sum(), 1.0);
    }

    #[test]
    fn rasterize_zero_confidence_endpoint_gives_empty_channel() {
        let topo = topo();
        let mut sk = uniform_skeleton(15, 0);
        sk.keypoints[0].confidence = 0.0;
        let map = rasterize_pose_map(&sk, &topo, (8, 8), 2.0).unwrap();
        assert_eq!(map.data().slice(ndarray::s![0, .., ..]).sum(), 0.0);
        // other parts still draw
        assert!(map.data().sum() > 0.0);
    }

    #[test]
    fn rasterize_respects_dropped_parts() {
        let topo = topo();
        let mut sk = uniform_skeleton(15, 0);
        sk.dropped_parts = vec![7];
        let map = rasterize_pose_map(&sk, &topo, (8, 8), 2.0).unwrap();
        assert_eq!(map.data().slice(ndarray::s![7, .., ..]).sum(), 0.0);
    }

    #[test]
    fn rasterize_matches_brute_force_oracle() {
        // Independent oracle: enumerate every pixel of the canvas and test its
        // distance to the segment. 20 randomized cases here; the acceptance
        // suite runs 100.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let topo = topo();
        for case in 0..20 {
            let (h, w) = (24usize, 24usize);
            let thickness = rng.random_range(1.0..6.0f32);
            let mut sk = uniform_skeleton(15, 0);
            for kp in &mut sk.keypoints {
                kp.confidence = 0.0;
            }
            let (ax, ay) = (rng.random_range(-4.0..28.0f32), rng.random_range(-4.0..28.0f32));
            let (bx, by) = (rng.random_range(-4.0..28.0f32), rng.random_range(-4.0..28.0f32));
            sk.keypoints[0] = Keypoint::new(ax, ay, 1.0);
            sk.keypoints[1] = Keypoint::new(bx, by, 1.0);
            let map = rasterize_pose_map(&sk, &topo, (h, w), thickness).unwrap();
            let r2 = (f64::from(thickness) / 2.0).powi(2);
            for y in 0..h {
                for x in 0..w {
                    let d2 = dist2_point_segment(
                        x as f64,
                        y as f64,
                        f64::from(ax),
                        f64::from(ay),
                        f64::from(bx),
                        f64::from(by),
                    );
                    let expect = if d2 <= r2 { 1.0 } else { 0.0 };
                    assert_eq!(map.get(0, y, x), expect, "case {case} pixel ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn bbox_tight_and_with_margin() {
        let mut sk = uniform_skeleton(15, 0);
        for kp in &mut sk.keypoints {
            kp.confidence = 0.0;
        }
        sk.keypoints[0] = Keypoint::new(10.0, 10.0, 1.0);
        sk.keypoints[1] = Keypoint::new(20.0, 30.0, 1.0);
        let tight = pose_bbox(&sk, 0.0, (640, 480)).unwrap();
        assert_eq!(tight, Rect { x0: 10.0, y0: 10.0, x1: 20.0, y1: 30.0 });
        let wide = pose_bbox(&sk, 0.1, (640, 480)).unwrap();
        assert_eq!(wide, Rect { x0: 8.0, y0: 8.0, x1: 22.0, y1: 32.0 });
    }

    #[test]
    fn bbox_clips_to_frame() {
        let mut sk = uniform_skeleton(15, 0);
        for kp in &mut sk.keypoints {
            kp.confidence = 0.0;
        }
        sk.keypoints[0] = Keypoint::new(1.0, 1.0, 1.0);
        sk.keypoints[1] = Keypoint::new(9.0, 9.0, 1.0);
        let r = pose_bbox(&sk, 0.5, (10, 10)).unwrap();
        assert_eq!(r, Rect { x0: 0.0, y0: 0.0, x1: 10.0, y1: 10.0 });
    }

    #[test]
    fn bbox_without_confident_joints_errors() {
        let mut sk = uniform_skeleton(15, 3);
        for kp in &mut sk.keypoints {
            kp.confidence = 0.0;
        }
        let err = pose_bbox(&sk, 0.0, (64, 64)).unwrap_err();
        assert!(matches!(err, Error::NoPose { frame: 3 }));
    }

    #[test]
    fn topology_rejects_bad_input() {
        assert!(SkeletonTopology::new(2, vec![], vec![], 0, vec![]).is_err());
        assert!(SkeletonTopology::new(2, vec![(0, 2)], vec!["a".into()], 0, vec![]).is_err());
        assert!(SkeletonTopology::new(
            3,
            vec![(0, 1), (1, 0)],
            vec!["a".into(), "b".into()],
            0,
            vec![]
        )
        .is_err());
    }

    #[test]
    fn builtin_topology_tree_is_complete() {
        let topo = topo();
        assert_eq!(topo.joint_count(), 15);
        assert_eq!(topo.part_count(), 14);
        let parents = topo.joint_parents();
        assert_eq!(parents[topo.root_joint()], None);
        let reachable = parents.iter().filter(|p| p.is_some()).count();
        assert_eq!(reachable, 14);
        assert_eq!(topo.joints_topological().len(), 15);
    }
}
