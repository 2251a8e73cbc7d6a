import { describe, expect, it } from 'vitest';

import {
  applySim3,
  composeSim3,
  identity,
  normalizeQuat,
  quatFromAxisAngle,
  quatMultiply,
  quatToRot,
  Sim3,
  validateSim3,
} from '../src/sim3';

describe('sim3', () => {
  it('identity leaves points alone', () => {
    expect(applySim3(identity(), [1, 2, 3])).toEqual([1, 2, 3]);
  });

  it('applies scale, then rotation, then translation', () => {
    const yaw90 = quatFromAxisAngle([0, 1, 0], Math.PI / 2);
    const t: Sim3 = { q: yaw90, t: [1, 0, 0], s: 2 };
    const p = applySim3(t, [0, 0, 1]); // scaled to (0,0,2), yawed to (2,0,0), then +x
    expect(p[0]).toBeCloseTo(3, 10);
    expect(p[1]).toBeCloseTo(0, 10);
    expect(p[2]).toBeCloseTo(0, 10);
  });

  it('composition matches sequential application', () => {
    const a: Sim3 = { q: normalizeQuat([0.9, 0.1, 0.3, 0.2]), t: [0.4, -1, 2], s: 1.7 };
    const b: Sim3 = { q: normalizeQuat([0.8, -0.2, 0.1, 0.5]), t: [-2, 0.5, 0.3], s: 0.6 };
    const ab = composeSim3(a, b);
    const p: [number, number, number] = [0.3, -0.7, 1.1];
    const direct = applySim3(ab, p);
    const sequential = applySim3(a, applySim3(b, p));
    for (let i = 0; i < 3; i++) expect(direct[i]).toBeCloseTo(sequential[i], 9);
  });

  it('quat multiply matches rotation composition', () => {
    const qa = quatFromAxisAngle([0, 1, 0], 0.7);
    const qb = quatFromAxisAngle([1, 0, 0], -0.4);
    const Rab = quatToRot(quatMultiply(qa, qb));
    const Ra = quatToRot(qa);
    const Rb = quatToRot(qb);
    // (Ra Rb) row 0
    for (let i = 0; i < 3; i++) {
      for (let j = 0; j < 3; j++) {
        const manual = Ra[i * 3] * Rb[j] + Ra[i * 3 + 1] * Rb[3 + j] + Ra[i * 3 + 2] * Rb[6 + j];
        expect(Rab[i * 3 + j]).toBeCloseTo(manual, 10);
      }
    }
  });

  it('validation mirrors server rules and names the field', () => {
    expect(() => validateSim3({ q: [2, 0, 0, 0], t: [0, 0, 0], s: 1 })).toThrow(/^q:/);
    expect(() => validateSim3({ q: [1, 0, 0, 0], t: [0, NaN, 0], s: 1 })).toThrow(/^t:/);
    expect(() => validateSim3({ q: [1, 0, 0, 0], t: [0, 0, 0], s: -1 })).toThrow(/^s:/);
    expect(() => validateSim3(identity())).not.toThrow();
  });
});
