//! Matrix inputs: Matrix Market files or inline gallery specs.

use randlr::eval::GallerySpec;
use randlr::io::read_matrix_market;
use randlr::kernels::Matrix;
use randlr::Result;

pub fn is_gallery(s: &str) -> bool {
    s.contains("spectrum=")
}

pub fn load(s: &str) -> Result<Matrix> {
    if is_gallery(s) {
        let spec: GallerySpec = s.parse()?;
        Ok(Matrix::Dense(spec.build()?))
    } else {
        read_matrix_market(s)
    }
}
