import { start } from "./app.js";

document.addEventListener("DOMContentLoaded", start);
