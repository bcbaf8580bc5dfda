/**
 * DOM wiring: keyboard handling, image display, overlay rendering, and the
 * progress strip. All review logic lives in the session module.
 *
 * Keys: G = good, B = bad, U = undo, T = toggle mask overlay.
 */

import { createHttpTransport } from './api';
import { OverlayState } from './overlay';
import { ReviewSession } from './session';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export function mount(): void {
  const transport = createHttpTransport('');
  const session = new ReviewSession(transport);
  const overlay = new OverlayState(0.4);

  const frameImg = el<HTMLImageElement>('frame');
  const maskImg = el<HTMLImageElement>('mask');
  const statusLine = el<HTMLDivElement>('status');
  const bannerLine = el<HTMLDivElement>('banner');
  const sequenceLabel = el<HTMLDivElement>('sequence');
  const completeBox = el<HTMLDivElement>('complete');
  const alphaSlider = el<HTMLInputElement>('alpha');

  function render(): void {
    const item = session.current;
    if (item) {
      if (!frameImg.src.endsWith(item.frame_url)) {
        frameImg.src = item.frame_url;
        maskImg.src = item.mask_url;
      }
      sequenceLabel.textContent = item.sequence_id;
    }
    maskImg.style.opacity = String(overlay.alpha);
    const c = session.counters;
    statusLine.textContent =
      `${c.done} done (${c.good} good / ${c.bad} bad)` +
      (session.inFlight ? ` | ${session.inFlight} saving` : '');
    bannerLine.textContent = session.banner ?? '';
    bannerLine.style.display = session.banner ? 'block' : 'none';
    const complete = session.phase === 'complete';
    completeBox.style.display = complete ? 'block' : 'none';
    if (complete) {
      completeBox.textContent =
        `Review complete: ${c.done} sorted, ${c.good} good, ${c.bad} bad.`;
    }
  }

  session.onChange(render);
  alphaSlider.addEventListener('input', () => {
    overlay.setAlpha(Number(alphaSlider.value) / 100);
    render();
  });

  document.addEventListener('keydown', (ev) => {
    if (ev.repeat) return;
    switch (ev.key.toLowerCase()) {
      case 'g':
        session.decide('good');
        break;
      case 'b':
        session.decide('bad');
        break;
      case 'u':
        session.undo();
        break;
      case 't':
        overlay.toggle();
        render();
        break;
      default:
        return;
    }
    ev.preventDefault();
  });

  void session.start().then(render);
}

if (typeof document !== 'undefined' && document.getElementById('frame')) {
  mount();
}
