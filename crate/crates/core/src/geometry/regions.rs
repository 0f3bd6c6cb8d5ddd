use crate::error::{Error, Result};
use crate::image::Mask;

/// Head region masks for one view.
///
/// `s` is the head, `s_f`/`s_h` the segmented face and hair, `f` the
/// rendered morphable-model coverage and `h` the derived hair/ear region
/// `S − (S_f ∩ F)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMasks {
    pub s: Mask,
    pub s_f: Mask,
    pub s_h: Mask,
    pub f: Mask,
    pub h: Mask,
}

impl RegionMasks {
    /// Builds the mask set and derives `h`.
    pub fn new(s: Mask, s_f: Mask, s_h: Mask, f: Mask) -> Result<Self> {
        let dims = (s.width(), s.height());
        for m in [&s_f, &s_h, &f] {
            if (m.width(), m.height()) != dims {
                return Err(Error::InvalidParameter("region masks must share dimensions".into()));
            }
        }
        if !s_f.is_subset_of(&s) {
            return Err(Error::InvalidParameter("segmented face mask must lie inside the head mask".into()));
        }
        if !s_h.is_subset_of(&s) {
            return Err(Error::InvalidParameter("segmented hair mask must lie inside the head mask".into()));
        }
        let h = Mask::new(dims.0, dims.1);
        let mut masks = Self { s, s_f, s_h, f, h };
        masks.compute_hair_region();
        Ok(masks)
    }

    pub fn width(&self) -> usize {
        self.s.width()
    }

    pub fn height(&self) -> usize {
        self.s.height()
    }

    /// Recomputes `h = S − (S_f ∩ F)` and returns it.
    pub fn compute_hair_region(&mut self) -> &Mask {
        self.h = self.s.minus(&self.s_f.and(&self.f));
        &self.h
    }

    /// Visible face region used as the `l_face` target: `F − (S_h ∩ F)`.
    pub fn face_target(&self) -> Mask {
        self.f.minus(&self.s_h)
    }

    /// Hair-over-face overlap `S_h ∩ F` where layer order is enforced.
    pub fn hair_over_face(&self) -> Mask {
        self.s_h.and(&self.f)
    }

    /// Known-face pixels `S_f ∩ F` that bound the hair region.
    pub fn known_face(&self) -> Mask {
        self.s_f.and(&self.f)
    }

    pub fn downsample2(&self) -> RegionMasks {
        let s = self.s.downsample2_all();
        let s_f = self.s_f.downsample2_all().and(&s);
        let s_h = self.s_h.downsample2_all().and(&s);
        let f = self.f.downsample2_all();
        let h = Mask::new(s.width(), s.height());
        let mut out = RegionMasks { s, s_f, s_h, f, h };
        out.compute_hair_region();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Mask {
        Mask::from_fn(w, h, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
    }

    #[test]
    fn face_fully_covered() {
        let s = rect(10, 10, 1, 1, 9, 9);
        let s_f = rect(10, 10, 3, 3, 7, 7);
        let m = RegionMasks::new(s.clone(), s_f.clone(), Mask::new(10, 10), rect(10, 10, 2, 2, 8, 8)).unwrap();
        assert_eq!(m.h, s.minus(&s_f));
    }

    #[test]
    fn disjoint_coverage_leaves_whole_head() {
        let s = rect(10, 10, 1, 1, 9, 9);
        let s_f = rect(10, 10, 3, 3, 7, 7);
        let m = RegionMasks::new(s.clone(), s_f, Mask::new(10, 10), rect(10, 10, 8, 0, 10, 2)).unwrap();
        assert_eq!(m.h, s);
    }

    #[test]
    fn rejects_face_outside_head() {
        let s = rect(6, 6, 0, 0, 3, 3);
        let s_f = rect(6, 6, 2, 2, 5, 5);
        assert!(RegionMasks::new(s, s_f, Mask::new(6, 6), Mask::new(6, 6)).is_err());
    }

    proptest! {
        #[test]
        fn hair_region_matches_pixelwise_oracle(
            bits in prop::collection::vec(0u8..16, 12 * 9)
        ) {
            let (w, h) = (12, 9);
            let s = Mask::from_vec(w, h, bits.iter().map(|b| b & 1 != 0 || b & 2 != 0 || b & 4 != 0).collect()).unwrap();
            let s_f = Mask::from_vec(w, h, bits.iter().map(|b| b & 2 != 0).collect()).unwrap();
            let s_h = Mask::from_vec(w, h, bits.iter().map(|b| b & 4 != 0).collect()).unwrap();
            let f = Mask::from_vec(w, h, bits.iter().map(|b| b & 8 != 0).collect()).unwrap();
            let m = RegionMasks::new(s, s_f, s_h, f).unwrap();
            for i in 0..w * h {
                let b = bits[i];
                let in_s = b & 7 != 0;
                let want = in_s && !((b & 2 != 0) && (b & 8 != 0));
                prop_assert_eq!(m.h.data()[i], want);
            }
            prop_assert!(m.h.is_subset_of(&m.s));
        }
    }
}
