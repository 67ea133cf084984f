"""How a training run is planned before any arithmetic happens.

The cyclic schedule has three parts: a soft-transfer descent that drops one
bit per phase from the starting depth down to two bits above the target, a
cyclic stage that bounces between (target+1) and target for a configured
number of cycles and then re-enters (target+1) once more, and a long final
phase at the target depth. This script expands a few settings and shows how
the knobs move the plan.

Run as: python demos/plan_walkthrough.py
"""

from bitcycle.schedule import CtmqInputs, expand_schedule


def show(title, inputs):
    phases = expand_schedule(inputs)
    print(f"{title}: {len(phases)} phases, "
          f"{sum(p.epochs for p in phases)} epochs")
    depths = "".join(f"{p.bit_depth:>3}" for p in phases)
    parts = "".join(f"{p.part[:3]:>3}" for p in phases)
    print("  bits :" + depths)
    print("  part :" + parts + "   (sof=soft_transfer, cyc=cyclic, fin=final)")
    print()


if __name__ == "__main__":
    show("reference plan (1-bit target, start 8, 9 cycles)",
         CtmqInputs(target_k=1, start_bits=8, cycles=9))

    show("2-bit target, start 8, 4 cycles",
         CtmqInputs(target_k=2, start_bits=8, cycles=4))

    show("no descent room (start = target+1): descent is empty",
         CtmqInputs(target_k=1, start_bits=2, cycles=2))

    show("zero cycles still re-enters target+1 once before the final phase",
         CtmqInputs(target_k=1, start_bits=4, cycles=0))

    print("budgets: every soft-transfer phase gets soft_epochs, every cyclic")
    print("phase (the tail re-entry included) gets cyclic_epochs, and the")
    print("final phase gets final_epochs:")
    inputs = CtmqInputs(target_k=1, start_bits=4, cycles=1,
                        soft_epochs=5, cyclic_epochs=7, final_epochs=40)
    for p in expand_schedule(inputs):
        print(f"  phase {p.index}: {p.part:<13} {p.bit_depth}-bit  {p.epochs} epochs")
