use super::Mask;

/// 8-connected labeling of a binary mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Components {
    /// Per pixel: 0 for background, otherwise `1 + component index`.
    pub labels: Vec<u32>,
    /// Pixel count per component, in label order.
    pub areas: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.areas.len()
    }
}

/// Labels are assigned in raster order of each component's first pixel.
pub fn connected_components(mask: &Mask) -> Components {
    let (h, w) = (mask.height, mask.width);
    let mut labels = vec![0u32; h * w];
    let mut areas = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask.pixels[start] || labels[start] != 0 {
            continue;
        }
        let label = areas.len() as u32 + 1;
        labels[start] = label;
        stack.push(start);
        let mut area = 0;
        while let Some(p) = stack.pop() {
            area += 1;
            let (y, x) = (p / w, p % w);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let q = ny * w + nx;
                    if mask.pixels[q] && labels[q] == 0 {
                        labels[q] = label;
                        stack.push(q);
                    }
                }
            }
        }
        areas.push(area);
    }
    Components { labels, areas }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_mask() {
        assert_eq!(connected_components(&Mask::empty(4, 4)).count(), 0);
    }

    #[test]
    fn diagonal_neighbours_join() {
        let m = Mask::from_points(3, 3, &[(0, 0), (1, 1)]);
        let cc = connected_components(&m);
        assert_eq!(cc.count(), 1);
        assert_eq!(cc.areas, vec![2]);
    }

    #[test]
    fn square_and_scan_order() {
        let mut pts: Vec<(usize, usize)> = (0..3).flat_map(|y| (0..3).map(move |x| (y + 2, x + 2))).collect();
        pts.push((0, 6));
        let cc = connected_components(&Mask::from_points(6, 7, &pts));
        assert_eq!(cc.areas, vec![1, 9]);
        assert_eq!(cc.labels[6], 1);
        assert_eq!(cc.labels[2 * 7 + 2], 2);
    }
}
