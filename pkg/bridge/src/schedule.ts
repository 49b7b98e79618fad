/** Linear-beta diffusion schedule; alpha(t)^2 + sigma(t)^2 = 1 for t in 1..T. */

export class NoiseSchedule {
  readonly timesteps: number;
  private readonly alphaBar: Float64Array;

  constructor(timesteps = 1000, betaStart = 1e-4, betaEnd = 0.02) {
    this.timesteps = timesteps;
    this.alphaBar = new Float64Array(timesteps + 1);
    this.alphaBar[0] = 1.0;
    let prod = 1.0;
    for (let t = 1; t <= timesteps; t++) {
      const beta = betaStart + ((t - 1) * (betaEnd - betaStart)) / (timesteps - 1);
      prod *= 1.0 - beta;
      this.alphaBar[t] = prod;
    }
  }

  private check(t: number): number {
    if (!Number.isInteger(t) || t < 1 || t > this.timesteps) {
      throw new RangeError(`timestep ${t} outside [1, ${this.timesteps}]`);
    }
    return t;
  }

  alpha(t: number): number {
    return Math.sqrt(this.alphaBar[this.check(t)]);
  }

  sigma(t: number): number {
    return Math.sqrt(1.0 - this.alphaBar[this.check(t)]);
  }
}
