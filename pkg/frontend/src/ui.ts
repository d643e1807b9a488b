import { ApiClient, ApiError } from "./api.js";
import { createDebouncedRender, DisplayedRender, RenderLoop } from "./renderLoop.js";
import {
  canRender,
  defaultSelection,
  selectGarment,
  selectionFromParams,
  selectionToParams,
  selectPreset,
} from "./selection.js";
import { CatalogEntry, GARMENT_SLOTS, LayerName, OutfitSelection, Preset } from "./types.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

interface ComparisonShot {
  url: string;
  correction: boolean;
}

export class WardrobeApp {
  private selection: OutfitSelection = defaultSelection();
  private catalog: CatalogEntry[] = [];
  private presets: Preset[] = [];
  private loop: RenderLoop;
  private displayedUrl: string | null = null;
  private comparison: ComparisonShot | null = null;
  private scrub: { request: () => void };

  private gallery = el("div", "gallery");
  private viewer = el("div", "viewer");
  private image = el("img", "render-image") as HTMLImageElement;
  private compareImage = el("img", "render-image compare") as HTMLImageElement;
  private compareLabel = el("div", "compare-label");
  private loading = el("div", "loading", "rendering…");
  private badge = el("div", "badge");
  private banner = el("div", "banner");
  private controls = el("div", "controls");
  private frameSlider = el("input") as HTMLInputElement;
  private frameLabel = el("span", "frame-label");
  private presetSelect = el("select") as HTMLSelectElement;

  constructor(private readonly api: ApiClient, private readonly root: HTMLElement) {
    this.loop = new RenderLoop(api, {
      onLoading: () => this.setLoading(true),
      onImage: (shot) => this.showRender(shot),
      onError: (err) => this.showError(err),
    });
    this.scrub = createDebouncedRender(() => this.requestRender(), 250);
  }

  async start(): Promise<void> {
    this.selection = selectionFromParams(
      new URLSearchParams(window.location.search),
    );
    this.root.append(this.banner, this.gallery, this.viewer, this.controls);
    this.banner.style.display = "none";
    try {
      [this.catalog, this.presets] = await Promise.all([
        this.api.getCatalog(),
        this.api.getPresets(),
      ]);
    } catch (err) {
      this.showBanner(
        `wardrobe service unreachable: ${(err as Error).message}`,
        () => this.start(),
      );
      return;
    }
    this.renderGallery();
    this.renderViewer();
    this.renderControls();
    if (canRender(this.selection)) this.requestRender();
  }

  private syncUrl(): void {
    const params = selectionToParams(this.selection);
    const query = params.toString();
    window.history.replaceState(
      null, "", query ? `?${query}` : window.location.pathname,
    );
  }

  private update(next: OutfitSelection, immediate = true): void {
    this.selection = next;
    this.syncUrl();
    this.renderGallery();
    if (!canRender(next)) return;
    if (immediate) {
      this.requestRender();
    } else {
      this.scrub.request();
    }
  }

  private requestRender(): void {
    void this.loop.request(this.selection);
  }

  private setLoading(on: boolean): void {
    this.loading.style.display = on ? "grid" : "none";
  }

  private showRender(shot: DisplayedRender): void {
    this.setLoading(false);
    this.banner.style.display = "none";
    const blob = new Blob([shot.result.bytes as BlobPart], { type: "image/png" });
    const url = URL.createObjectURL(blob);
    if (this.displayedUrl && this.displayedUrl !== this.comparison?.url) {
      URL.revokeObjectURL(this.displayedUrl);
    }
    this.displayedUrl = url;
    this.image.src = url;
    const d = shot.result.diagnostics;
    this.badge.textContent =
      `pairs ${d.pairs} · confirmed ${d.confirmed} · corrected ${d.corrected}`;
    this.badge.classList.toggle("active", d.corrected > 0);
    this.compareImage.style.display = this.comparison ? "" : "none";
    this.compareLabel.style.display = this.comparison ? "" : "none";
  }

  private showError(err: Error): void {
    this.setLoading(false);
    const status = err instanceof ApiError ? ` (${err.status})` : "";
    this.showBanner(`render failed${status}: ${err.message}`, () =>
      this.requestRender(),
    );
  }

  private showBanner(message: string, retry: () => void): void {
    this.banner.textContent = "";
    this.banner.append(el("span", undefined, message));
    const button = el("button", undefined, "retry");
    button.addEventListener("click", retry);
    this.banner.append(button);
    this.banner.style.display = "";
  }

  private renderGallery(): void {
    this.gallery.textContent = "";
    if (this.catalog.length === 0) {
      this.gallery.append(
        el("div", "empty", "wardrobe is empty — add assets with `splatwear synth`"),
      );
      return;
    }
    const groups: LayerName[] = ["body", ...GARMENT_SLOTS] as LayerName[];
    for (const layer of groups) {
      const entries = this.catalog.filter((e) => e.layer === layer);
      if (!entries.length) continue;
      const section = el("div", "layer-group");
      section.append(el("h3", undefined, layer));
      for (const entry of entries) {
        const selected =
          layer === "body"
            ? this.selection.bodyId === entry.id
            : this.selection.slots[layer as "upper" | "lower" | "outer"] === entry.id;
        const card = el("button", selected ? "card selected" : "card");
        const thumb = this.api.thumbnailUrl(entry);
        if (thumb) {
          const img = el("img") as HTMLImageElement;
          img.src = thumb;
          img.alt = entry.id;
          card.append(img);
        }
        card.append(el("div", "card-title", entry.id));
        card.append(el("div", "card-sub", entry.category));
        card.addEventListener("click", () => {
          const next = selected && layer !== "body" ? null : entry.id;
          this.update(selectGarment(this.selection, layer, next));
        });
        section.append(card);
      }
      this.gallery.append(section);
    }
  }

  private renderViewer(): void {
    this.viewer.textContent = "";
    const stage = el("div", "stage");
    stage.append(this.image, this.compareImage, this.loading);
    this.setLoading(false);
    this.compareImage.style.display = "none";
    this.compareLabel.style.display = "none";
    this.viewer.append(stage, this.compareLabel, this.badge);
  }

  private slider(
    label: string, min: number, max: number, step: number, value: number,
    onInput: (v: number) => void,
  ): HTMLElement {
    const wrap = el("label", "slider");
    wrap.append(el("span", undefined, label));
    const input = el("input") as HTMLInputElement;
    input.type = "range";
    input.min = String(min);
    input.max = String(max);
    input.step = String(step);
    input.value = String(value);
    input.addEventListener("input", () => onInput(Number(input.value)));
    wrap.append(input);
    return wrap;
  }

  private renderControls(): void {
    this.controls.textContent = "";

    const pose = el("div", "panel");
    pose.append(el("h3", undefined, "pose"));
    this.presetSelect.textContent = "";
    for (const preset of this.presets) {
      const opt = el("option", undefined, `${preset.name} (${preset.frames})`);
      opt.setAttribute("value", preset.name);
      this.presetSelect.append(opt);
    }
    this.presetSelect.value = this.selection.preset;
    this.presetSelect.addEventListener("change", () => {
      this.update(selectPreset(this.selection, this.presetSelect.value));
      this.refreshFrameSlider();
    });
    pose.append(this.presetSelect);
    this.frameSlider.type = "range";
    this.frameSlider.addEventListener("input", () => {
      this.selection = { ...this.selection, frame: Number(this.frameSlider.value) };
      this.refreshFrameLabel();
      this.syncUrl();
      this.scrub.request(); // debounced: at most 4 renders per second
    });
    pose.append(this.frameSlider, this.frameLabel);
    this.refreshFrameSlider();

    const shape = el("div", "panel");
    shape.append(el("h3", undefined, "shape"));
    this.selection.shape.forEach((value, i) => {
      shape.append(
        this.slider(`beta ${i}`, -2, 2, 0.05, value, (v) => {
          const next = [...this.selection.shape];
          next[i] = v;
          this.selection = { ...this.selection, shape: next };
          this.syncUrl();
          this.scrub.request();
        }),
      );
    });

    const camera = el("div", "panel");
    camera.append(el("h3", undefined, "camera"));
    camera.append(
      this.slider("azimuth", 0, 360, 1, this.selection.azimuth, (v) => {
        this.selection = { ...this.selection, azimuth: v };
        this.syncUrl();
        this.scrub.request();
      }),
      this.slider("elevation", -40, 60, 1, this.selection.elevation, (v) => {
        this.selection = { ...this.selection, elevation: v };
        this.syncUrl();
        this.scrub.request();
      }),
      this.slider("distance", 1, 5, 0.1, this.selection.distance, (v) => {
        this.selection = { ...this.selection, distance: v };
        this.syncUrl();
        this.scrub.request();
      }),
    );

    const correction = el("div", "panel");
    correction.append(el("h3", undefined, "correction"));
    const toggle = el("button", "toggle");
    const setToggleText = () => {
      toggle.textContent = this.selection.correction
        ? "penetration correction: on"
        : "penetration correction: off";
    };
    setToggleText();
    toggle.addEventListener("click", () => {
      // Pin the current frame as the comparison shot, then re-render with
      // the flag flipped for a side-by-side view.
      if (this.displayedUrl) {
        this.comparison = {
          url: this.displayedUrl,
          correction: this.selection.correction,
        };
        this.compareImage.src = this.displayedUrl;
        this.compareLabel.textContent = this.comparison.correction
          ? "was: corrected"
          : "was: uncorrected";
      }
      this.update({ ...this.selection, correction: !this.selection.correction });
      setToggleText();
    });
    correction.append(toggle);

    this.controls.append(pose, shape, camera, correction);
  }

  private refreshFrameSlider(): void {
    const preset = this.presets.find((p) => p.name === this.selection.preset);
    const frames = preset ? preset.frames : 1;
    this.frameSlider.min = "0";
    this.frameSlider.max = String(Math.max(frames - 1, 0));
    this.frameSlider.step = "1";
    this.frameSlider.value = String(Math.min(this.selection.frame, frames - 1));
    this.refreshFrameLabel();
  }

  private refreshFrameLabel(): void {
    const f = Number(this.frameSlider.value);
    this.frameLabel.textContent = f === 0 ? "frame 0 (canonical)" : `frame ${f}`;
  }
}
