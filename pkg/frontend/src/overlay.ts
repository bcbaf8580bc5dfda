/**
 * Mask overlay display state: a translucent tint over the frame, toggled
 * with a key and tuned with an alpha slider. Purely visual; it never
 * touches the underlying images or the session.
 */

export class OverlayState {
  private _alpha: number;
  private _visible = true;

  constructor(alpha = 0.4) {
    this._alpha = clamp01(alpha);
  }

  get alpha(): number {
    return this._visible ? this._alpha : 0;
  }

  /** The configured alpha, independent of the visibility toggle. */
  get configuredAlpha(): number {
    return this._alpha;
  }

  get visible(): boolean {
    return this._visible;
  }

  setAlpha(a: number): void {
    this._alpha = clamp01(a);
  }

  toggle(): void {
    this._visible = !this._visible;
  }
}

function clamp01(x: number): number {
  if (Number.isNaN(x)) return 0;
  return Math.min(1, Math.max(0, x));
}
