import { ApiClient } from "./api.js";
import { WardrobeApp } from "./ui.js";

const params = new URLSearchParams(window.location.search);
const apiBase = params.get("api") ?? "";
const root = document.getElementById("app");
if (root) {
  void new WardrobeApp(new ApiClient(apiBase), root).start();
}
