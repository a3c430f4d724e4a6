use burn::tensor::activation::sigmoid;
use burn::tensor::backend::Backend;
use burn::tensor::{Tensor, TensorData};

type F64Back = burn::backend::NdArray<f64>;
type F64Diff = burn::backend::Autodiff<F64Back>;

fn check<F>(name: &str, f: F)
where
    F: Fn(Tensor<F64Diff, 1>) -> Tensor<F64Diff, 1>,
{
    let device: <F64Diff as Backend>::Device = Default::default();
    let vals = vec![-1.5, -0.3, 0.2, 1.9];
    let x = Tensor::<F64Diff, 1>::from_data(TensorData::new(vals.clone(), [4]), &device)
        .require_grad();
    let y = f(x.clone()).sum();
    let grads = y.backward();
    let g: Vec<f64> = x.grad(&grads).unwrap().into_data().to_vec().unwrap();
    let eps = 1e-6;
    let scalar = |v: &[f64]| -> f64 {
        let x = Tensor::<F64Diff, 1>::from_data(TensorData::new(v.to_vec(), [4]), &device);
        f(x).sum().into_scalar()
    };
    let mut worst = 0.0f64;
    for i in 0..4 {
        let mut p = vals.clone();
        let mut m = vals.clone();
        p[i] += eps;
        m[i] -= eps;
        let fd = (scalar(&p) - scalar(&m)) / (2.0 * eps);
        worst = worst.max((g[i] - fd).abs() / fd.abs().max(1e-9));
    }
    println!("{name}: worst rel {worst:.3e}");
}

fn main() {
    check("sigmoid", |x| sigmoid(x));
    check("log(sigmoid)", |x| sigmoid(x).log());
    check("clamp", |x| x.clamp(-1.0, 1.0));
    check("sigmoid.clamp.log", |x| {
        sigmoid(x).clamp(1e-7, 1.0 - 1e-7).log()
    });
    check("mean", |x| x.mean());
    check("full bce-ish", |x| {
        let p = sigmoid(x).clamp(1e-7, 1.0 - 1e-7);
        let t = Tensor::<F64Diff, 1>::from_data(
            TensorData::new(vec![1.0, 0.0, 1.0, 0.0], [4]),
            &Default::default(),
        );
        (t.clone() * p.clone().log() + (t.neg() + 1.0) * (p.neg() + 1.0).log())
            .mean()
            .reshape([1])
            .neg()
    });
}
