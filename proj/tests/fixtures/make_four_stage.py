"""Writes four_stage_loss.csv: a piecewise-linear loss curve with a steep
drop over steps 1-1000, a near-flat plateau to 8000, a second drop to 10000
and a flat tail to 12000, plus small deterministic noise."""
import math

def loss(step):
    if step <= 1000:
        base = 10.0 - 3.0 * step / 1000
    elif step <= 8000:
        base = 7.0 - 0.07 * (step - 1000) / 7000
    elif step <= 10000:
        base = 6.93 - 3.9 * (step - 8000) / 2000
    else:
        base = 3.03
    return base + 0.002 * math.sin(step * 12.9898) * math.cos(step * 78.233)

with open("four_stage_loss.csv", "w") as out:
    out.write("step,train_loss,lr,wall_clock_s\n")
    for step in range(1, 12001):
        out.write(f"{step},{loss(step):.6f},0.001,{step * 0.01:.3f}\n")
