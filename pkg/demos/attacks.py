"""Train a small plain classifier and probe it with FGSM and I-FGSM.

At small budgets the network is close to linear around each image, so the
iterated attack buys little; the gap opens up past 16/255.

    python demos/attacks.py
"""
from wassreg import AttackConfig, TrainConfig, evaluate_robust, init_params, load_digits_dataset, train

train_set, test_set = load_digits_dataset(seed=0)
params = init_params([64, 64, 64, 10], "softmax", seed=0)
params, _ = train(params, train_set, TrainConfig(epochs=20, lr_decay={10: 0.1, 15: 0.1}))

for eps in (2 / 255, 8 / 255, 16 / 255, 32 / 255):
    row = [f"eps {eps * 255:>3.0f}/255"]
    for kind in ("fgsm", "ifgsm"):
        res = evaluate_robust(params, test_set, AttackConfig(kind, eps, alpha=eps / 4, steps=10))
        row.append(f"{kind} {res['robust_test_error_pct']:6.2f}%")
    print("  ".join(row))
print(f"natural error {res['natural_test_error_pct']:.2f}% on {len(test_set)} test images")
