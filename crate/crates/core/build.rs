// The netlib backend links against `-lcblas`, but Debian's OpenBLAS packages
// ship the CBLAS symbols inside libopenblas itself without installing a
// libcblas.so stub. Provide one in OUT_DIR when the real library is absent.
use std::env;
use std::path::Path;

fn main() {
    let lib_dirs = [
        "/usr/lib/x86_64-linux-gnu",
        "/usr/lib",
        "/usr/local/lib",
        "/usr/lib64",
    ];
    if lib_dirs
        .iter()
        .any(|d| Path::new(d).join("libcblas.so").exists())
    {
        return;
    }
    let Some(openblas) = lib_dirs
        .iter()
        .map(|d| Path::new(d).join("libopenblas.so"))
        .find(|p| p.exists())
    else {
        return;
    };
    let out_dir = env::var("OUT_DIR").unwrap();
    let shim = Path::new(&out_dir).join("libcblas.so");
    if !shim.exists() {
        #[cfg(unix)]
        std::os::unix::fs::symlink(&openblas, &shim).ok();
    }
    println!("cargo:rustc-link-search=native={out_dir}");
}
