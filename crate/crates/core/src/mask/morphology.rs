use std::collections::VecDeque;
use std::fmt;

use super::{BinaryMask, MaskError};

/// Pixel adjacency used for components and flood fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
            Connectivity::Eight => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
        }
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Connectivity::Four => "4",
            Connectivity::Eight => "8",
        })
    }
}

impl std::str::FromStr for Connectivity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "4" => Ok(Self::Four),
            "8" => Ok(Self::Eight),
            other => Err(format!("connectivity must be 4 or 8, got '{other}'")),
        }
    }
}

fn neighbors(
    y: usize,
    x: usize,
    h: usize,
    w: usize,
    conn: Connectivity,
) -> impl Iterator<Item = (usize, usize)> {
    conn.offsets().iter().filter_map(move |&(dy, dx)| {
        let ny = y.checked_add_signed(dy)?;
        let nx = x.checked_add_signed(dx)?;
        (ny < h && nx < w).then_some((ny, nx))
    })
}

/// Foreground components as lists of `(y, x)` in discovery order.
pub fn components(mask: &BinaryMask, conn: Connectivity) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = mask.dims();
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if seen[start] || !mask.bits()[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back((start / w, start % w));
        let mut comp = Vec::new();
        while let Some((y, x)) = queue.pop_front() {
            comp.push((y, x));
            for (ny, nx) in neighbors(y, x, h, w, conn) {
                let i = ny * w + nx;
                if !seen[i] && mask.bits()[i] {
                    seen[i] = true;
                    queue.push_back((ny, nx));
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Boundary pixels of each component: members with a 4-neighbour outside
/// the mask or lying on the image border.
pub fn contours(mask: &BinaryMask, conn: Connectivity) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = mask.dims();
    let on_boundary = |&(y, x): &(usize, usize)| {
        y == 0
            || x == 0
            || y + 1 == h
            || x + 1 == w
            || neighbors(y, x, h, w, Connectivity::Four).any(|(ny, nx)| !mask.get(ny, nx))
    };
    components(mask, conn)
        .into_iter()
        .map(|c| c.into_iter().filter(on_boundary).collect())
        .collect()
}

/// All contour pixels of `mask` as a single mask.
pub fn contour_union(mask: &BinaryMask, conn: Connectivity) -> BinaryMask {
    let mut out = BinaryMask::empty(mask.height(), mask.width());
    for (y, x) in contours(mask, conn).into_iter().flatten() {
        out.set(y, x, true);
    }
    out
}

/// Foreground plus every background pixel not reachable from the border.
pub fn fill(mask: &BinaryMask, conn: Connectivity) -> BinaryMask {
    let (h, w) = mask.dims();
    let mut outside = vec![false; h * w];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let border = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
            if border && !mask.get(y, x) {
                outside[y * w + x] = true;
                queue.push_back((y, x));
            }
        }
    }
    while let Some((y, x)) = queue.pop_front() {
        for (ny, nx) in neighbors(y, x, h, w, conn) {
            let i = ny * w + nx;
            if !outside[i] && !mask.bits()[i] {
                outside[i] = true;
                queue.push_back((ny, nx));
            }
        }
    }
    BinaryMask::new(h, w, outside.into_iter().map(|o| !o).collect()).expect("same dims")
}

/// Merges two consecutive frames' masks: the filled union of both contour
/// sets, together with both masks.
pub fn temporal_overlap(
    prev: &BinaryMask,
    cur: &BinaryMask,
    conn: Connectivity,
) -> Result<BinaryMask, MaskError> {
    let edges = contour_union(prev, conn).union(&contour_union(cur, conn))?;
    fill(&edges, conn).union(prev)?.union(cur)
}

/// Enlarges each pixel to an `H/h × W/w` block.
pub fn upsample_nearest(mask: &BinaryMask, target: (usize, usize)) -> Result<BinaryMask, MaskError> {
    let (h, w) = mask.dims();
    let (th, tw) = target;
    if h == 0 || w == 0 || th < h || tw < w || th % h != 0 || tw % w != 0 {
        return Err(MaskError::ScaleFactor { from: (h, w), to: target });
    }
    let (fy, fx) = (th / h, tw / w);
    Ok(BinaryMask::from_fn(th, tw, |y, x| mask.get(y / fy, x / fx)))
}
