//! Freeman chain codes from Moore-neighbour boundary tracing.

use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::image::BinaryImage;

/// Image-space step `(dx, dy)` for each Freeman direction; rows grow
/// downward, so direction 2 (north) is `dy = -1`.
pub const STEPS: [(i32, i32); 8] = [(1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1)];

/// Moore neighbourhood in clockwise screen order starting west.
const RING: [(i32, i32); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

fn code_of(step: (i32, i32)) -> u8 {
    STEPS.iter().position(|&s| s == step).expect("unit step") as u8
}

fn ring_index(step: (i32, i32)) -> usize {
    RING.iter().position(|&s| s == step).expect("unit step")
}

/// Closed boundary as a start pixel and a sequence of Freeman directions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainCode {
    pub start: (i32, i32),
    pub links: Vec<u8>,
}

impl ChainCode {
    pub fn new(start: (i32, i32), links: Vec<u8>) -> Result<Self> {
        if let Some(a) = links.iter().find(|&&a| a > 7) {
            return Err(GaitError::invalid(format!("chain direction {a} outside 0..=7")));
        }
        Ok(Self { start, links })
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Net image-space displacement of the whole chain.
    pub fn displacement(&self) -> (i32, i32) {
        self.links.iter().fold((0, 0), |(x, y), &a| {
            let (dx, dy) = STEPS[a as usize];
            (x + dx, y + dy)
        })
    }

    pub fn is_closed(&self) -> bool {
        !self.links.is_empty() && self.displacement() == (0, 0)
    }

    /// Pixel positions visited, starting and ending at `start`.
    pub fn points(&self) -> Vec<(i32, i32)> {
        let mut p = self.start;
        let mut out = Vec::with_capacity(self.links.len() + 1);
        out.push(p);
        for &a in &self.links {
            let (dx, dy) = STEPS[a as usize];
            p = (p.0 + dx, p.1 + dy);
            out.push(p);
        }
        out
    }

    /// The same closed path entered `k` links later.
    pub fn rotated(&self, k: usize) -> ChainCode {
        let k = k % self.links.len().max(1);
        let start = self.points()[k];
        let mut links = self.links.clone();
        links.rotate_left(k);
        ChainCode { start, links }
    }

    pub fn translated(&self, dx: i32, dy: i32) -> ChainCode {
        ChainCode {
            start: (self.start.0 + dx, self.start.1 + dy),
            links: self.links.clone(),
        }
    }
}

/// Labels 8-connected foreground components and returns a mask of the
/// largest (the earliest in raster order on ties).
pub fn largest_component(image: &BinaryImage) -> Option<BinaryImage> {
    let (w, h) = (image.width(), image.height());
    let mut label = vec![0u32; w * h];
    let mut best: Option<(usize, u32)> = None;
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if image.data()[start] == 0 || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        stack.push(start);
        let mut size = 0usize;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = ((i % w) as i32, (i / w) as i32);
            for (dx, dy) in RING {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i32 || ny >= h as i32 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if image.data()[j] != 0 && label[j] == 0 {
                    label[j] = next;
                    stack.push(j);
                }
            }
        }
        if best.is_none_or(|(s, _)| size > s) {
            best = Some((size, next));
        }
    }
    let (_, keep) = best?;
    Some(BinaryImage::from_vec(w, h, label.iter().map(|&l| u8::from(l == keep)).collect()).expect("same size"))
}

/// Clockwise Moore-neighbour trace of the largest component's outer
/// boundary, stopped by Jacob's criterion (back at the start pixel and about
/// to repeat the first link).
pub fn trace_contour(image: &BinaryImage) -> Result<ChainCode> {
    let comp = largest_component(image).ok_or(GaitError::DegenerateContour("no foreground"))?;
    let first = comp.data().iter().position(|&v| v != 0).expect("component is non-empty");
    let w = comp.width();
    let start = ((first % w) as i32, (first / w) as i32);
    let fg = |p: (i32, i32)| comp.get_signed(p.0 as isize, p.1 as isize);

    // Backtrack neighbour as an offset from the current pixel; west of the
    // first raster pixel is always background.
    let step = |cur: (i32, i32), back: (i32, i32)| {
        let r0 = ring_index(back);
        (1..=8).find_map(|k| {
            let off = RING[(r0 + k) % 8];
            let cand = (cur.0 + off.0, cur.1 + off.1);
            fg(cand).then(|| {
                let prev = RING[(r0 + k - 1) % 8];
                (code_of(off), cand, (cur.0 + prev.0 - cand.0, cur.1 + prev.1 - cand.1))
            })
        })
    };
    let first = step(start, (-1, 0)).ok_or(GaitError::DegenerateContour("isolated pixel"))?;
    let (mut code, mut cur, mut back) = first;
    let mut links = Vec::new();
    let limit = 4 * comp.width() * comp.height() + 8;
    loop {
        links.push(code);
        let next = step(cur, back).expect("a traced pixel always has a foreground neighbour");
        if cur == start && next.0 == first.0 {
            break;
        }
        if links.len() > limit {
            return Err(GaitError::DegenerateContour("boundary trace did not terminate"));
        }
        (code, cur, back) = next;
    }
    ChainCode::new(start, links)
}
