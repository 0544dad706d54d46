//! Synthesize the passivating controller of a single converter bus and
//! print the resulting gain, storage and certificate margin.

use passnet::linsys::{check_strict_passivity, PassivityCertificate};
use passnet::microgrid::DguParams;
use passnet::netgraph::build_node_model;
use passnet::synthesis::{synthesize_node, SynthesisOptions};

fn main() -> passnet::Result<()> {
    let node = build_node_model(&DguParams::default().dynamics()).expect("parametric")?;
    let res = synthesize_node(&node, &SynthesisOptions::with_lambda(-8.0))?;

    println!("optimal scalar s = {:.8}", res.s);
    println!("control penalty R = {:.4}", res.r[(0, 0)]);
    println!("gain K = {:?}", res.k.row(0).iter().collect::<Vec<_>>());
    println!("storage P =\n{:.4}", res.p);
    println!("dissipation shape Gamma =\n{:.6}", res.gamma);

    // the synthesized certificate closes the dissipation inequality exactly
    let cert = PassivityCertificate::new(res.p.clone(), res.gamma.clone())?;
    let chk = check_strict_passivity(
        &node.a,
        Some(&node.bu),
        &node.bw,
        &node.c,
        Some(&res.k),
        &cert,
        1e-8,
    )?;
    println!("certificate margin {:.3e} (tol {:.3e}): {}", chk.margin, chk.tol, chk.passed);
    Ok(())
}
