//! Convex polygon clipping in the plane.

/// Shoelace area; positive for counter-clockwise vertex order.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % poly.len()];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc
}

// > 0 when p is left of the directed edge a->b
fn side(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

fn edge_hit(a: [f64; 2], b: [f64; 2], p: [f64; 2], q: [f64; 2]) -> [f64; 2] {
    let sp = side(a, b, p);
    let sq = side(a, b, q);
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Sutherland–Hodgman: clips `subject` against the convex, counter-clockwise `clip`
/// polygon. Returns the (possibly empty) intersection polygon.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = side(a, b, cur) >= 0.0;
            let prev_in = side(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(edge_hit(a, b, prev, cur));
                }
                output.push(cur);
            } else if prev_in {
                output.push(edge_hit(a, b, prev, cur));
            }
        }
    }
    output
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: f64, y0: f64, s: f64) -> Vec<[f64; 2]> {
        vec![[x0, y0], [x0 + s, y0], [x0 + s, y0 + s], [x0, y0 + s]]
    }

    #[test]
    fn area_of_unit_square() {
        assert_eq!(polygon_area(&square(0.0, 0.0, 1.0)), 1.0);
        assert_eq!(polygon_area(&[[0.0, 0.0], [1.0, 1.0]]), 0.0);
    }

    #[test]
    fn overlapping_squares() {
        let inter = clip_convex(&square(0.0, 0.0, 1.0), &square(0.5, 0.5, 1.0));
        assert!((polygon_area(&inter) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn disjoint_squares() {
        let inter = clip_convex(&square(0.0, 0.0, 1.0), &square(2.0, 0.0, 1.0));
        assert!(polygon_area(&inter).abs() < 1e-15);
    }

    #[test]
    fn contained_square() {
        let inter = clip_convex(&square(0.25, 0.25, 0.5), &square(0.0, 0.0, 1.0));
        assert!((polygon_area(&inter) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn diamond_in_square() {
        let diamond = [[0.5, 0.0], [1.0, 0.5], [0.5, 1.0], [0.0, 0.5]];
        let inter = clip_convex(&square(0.0, 0.0, 1.0), &diamond);
        assert!((polygon_area(&inter) - 0.5).abs() < 1e-15);
    }
}
